# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernels (per-trial C loops).

Same contract as the NumPy backend in ``_numpy_impl``; see that module for
the indexing conventions. Trials are independent, so the per-trial loop
runs without the GIL and the harness thread pool gets real parallelism.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef inline void mat_vec(const double* A, const double* x, double* out,
                         Py_ssize_t r, Py_ssize_t c) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(r):
        acc = 0.0
        for j in range(c):
            acc += A[i * c + j] * x[j]
        out[i] = acc


cdef inline void mat_mul(const double* A, const double* B, double* out,
                         Py_ssize_t r, Py_ssize_t k, Py_ssize_t c) noexcept nogil:
    # out (r x c) = A (r x k) @ B (k x c)
    cdef Py_ssize_t i, j, t
    cdef double acc
    for i in range(r):
        for j in range(c):
            acc = 0.0
            for t in range(k):
                acc += A[i * k + t] * B[t * c + j]
            out[i * c + j] = acc


cdef inline void mat_mul_bt(const double* A, const double* B, double* out,
                            Py_ssize_t r, Py_ssize_t k, Py_ssize_t c) noexcept nogil:
    # out (r x c) = A (r x k) @ B^T, with B stored (c x k)
    cdef Py_ssize_t i, j, t
    cdef double acc
    for i in range(r):
        for j in range(c):
            acc = 0.0
            for t in range(k):
                acc += A[i * k + t] * B[j * k + t]
            out[i * c + j] = acc


cdef inline void symmetrize_inplace(double* P, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double m
    for i in range(n):
        for j in range(i + 1, n):
            m = 0.5 * (P[i * n + j] + P[j * n + i])
            P[i * n + j] = m
            P[j * n + i] = m


cdef inline int chol_solve(double* S, double* rhs, Py_ssize_t l,
                           Py_ssize_t ncols) noexcept nogil:
    # Solve S X = rhs in place (S SPD l x l, rhs l x ncols, row-major).
    # S is overwritten by its Cholesky factor. Returns 0 on success.
    cdef Py_ssize_t i, j, k2, col
    cdef double acc
    for i in range(l):
        for j in range(i + 1):
            acc = S[i * l + j]
            for k2 in range(j):
                acc -= S[i * l + k2] * S[j * l + k2]
            if i == j:
                if acc <= 0.0:
                    return 1
                S[i * l + i] = sqrt(acc)
            else:
                S[i * l + j] = acc / S[j * l + j]
    for col in range(ncols):
        for i in range(l):
            acc = rhs[i * ncols + col]
            for k2 in range(i):
                acc -= S[i * l + k2] * rhs[k2 * ncols + col]
            rhs[i * ncols + col] = acc / S[i * l + i]
        for i in range(l - 1, -1, -1):
            acc = rhs[i * ncols + col]
            for k2 in range(i + 1, l):
                acc -= S[k2 * l + i] * rhs[k2 * ncols + col]
            rhs[i * ncols + col] = acc / S[i * l + i]
    return 0


cdef inline double vec_norm(const double* x, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(n):
        acc += x[i] * x[i]
    return sqrt(acc)


cdef int _open_loop_trial(
    const double* A, const double* C, const double* V,
    const double* x1, const double* xhat1, const double* P1,
    const double* p_seq, const double* w_eff_seq,
    const unsigned char* s_t, const unsigned char* s_r,
    const double* v_noise, const double* w_noise,
    double div_threshold, Py_ssize_t T, Py_ssize_t n, Py_ssize_t l,
    double* out_x, double* out_xh_prior, double* out_xh_post,
    double* out_y, double* out_trace,
    double* x, double* xh, double* P, double* tmp_nn, double* cp,
    double* s_mat, double* kt, double* y, double* innov,
    long long* div_step,
) noexcept nogil:
    cdef Py_ssize_t k, i, j, i2
    cdef double p, tr, gate
    div_step[0] = -1
    for i in range(n):
        x[i] = x1[i]
        xh[i] = xhat1[i]
    for i in range(n * n):
        P[i] = P1[i]

    for k in range(T):
        if k > 0:
            # x <- A x + v[k]; xh <- A xh; P <- A P A^T + V
            mat_vec(A, x, tmp_nn, n, n)
            for i in range(n):
                x[i] = tmp_nn[i] + v_noise[k * n + i]
            mat_vec(A, xh, tmp_nn, n, n)
            for i in range(n):
                xh[i] = tmp_nn[i]
            mat_mul(A, P, tmp_nn, n, n, n)
            mat_mul_bt(tmp_nn, A, P, n, n, n)
            for i in range(n * n):
                P[i] = P[i] + V[i]
            symmetrize_inplace(P, n)

        p = p_seq[k]
        # cp = C P; s = p^2 cp C^T + W'(k); K^T = p * solve(s, cp)
        mat_mul(C, P, cp, l, n, n)
        mat_mul_bt(cp, C, s_mat, l, n, l)
        for i in range(l * l):
            s_mat[i] = p * p * s_mat[i] + w_eff_seq[k * l * l + i]
        for i in range(l * n):
            kt[i] = cp[i]
        if chol_solve(s_mat, kt, l, n):
            return 1
        for i in range(l * n):
            kt[i] = p * kt[i]

        # y = s_r (s_t C x + w)
        gate = 1.0 if s_r[k] else 0.0
        mat_vec(C, x, y, l, n)
        for i in range(l):
            y[i] = gate * ((1.0 if s_t[k] else 0.0) * y[i] + w_noise[k * l + i])

        for i in range(n):
            out_x[k * n + i] = x[i]
            out_xh_prior[k * n + i] = xh[i]
        for i in range(l):
            out_y[k * l + i] = y[i]

        if s_r[k]:
            # innov = y - p C xh; xh += K innov; P -= p K cp
            mat_vec(C, xh, innov, l, n)
            for i in range(l):
                innov[i] = y[i] - p * innov[i]
            for i in range(n):
                for j in range(l):
                    xh[i] = xh[i] + kt[j * n + i] * innov[j]
            # kt holds K^T (l x n); form K @ cp directly
            for i in range(n):
                for j in range(n):
                    tr = 0.0
                    for i2 in range(l):
                        tr += kt[i2 * n + i] * cp[i2 * n + j]
                    tmp_nn[i * n + j] = tr
            for i in range(n * n):
                P[i] = P[i] - p * tmp_nn[i]
            symmetrize_inplace(P, n)

        tr = 0.0
        for i in range(n):
            tr += P[i * n + i]
            out_xh_post[k * n + i] = xh[i]
        out_trace[k] = tr

        if vec_norm(x, n) > div_threshold:
            div_step[0] = k + 1
            return 0
    return 0


def simulate_open_loop(A, C, V, W, x1, xhat1, P1,
                       p_seq, s_t, s_r, v_noise, w_noise,
                       double div_threshold=1e6, store_cov=False, x1_mean=None):
    if store_cov:
        # covariance logging is a test/diagnostic path; use the NumPy backend
        from . import _numpy_impl
        return _numpy_impl.simulate_open_loop(
            A, C, V, W, x1, xhat1, P1, p_seq, s_t, s_r, v_noise, w_noise,
            div_threshold=div_threshold, store_cov=True, x1_mean=x1_mean)

    A = np.ascontiguousarray(A, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    V = np.ascontiguousarray(V, dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t l = C.shape[0]
    s_t = np.ascontiguousarray(s_t, dtype=np.uint8)
    s_r = np.ascontiguousarray(s_r, dtype=np.uint8)
    cdef Py_ssize_t trials = s_r.shape[0]
    cdef Py_ssize_t T = s_r.shape[1]
    p_arr = np.ascontiguousarray(p_seq, dtype=np.float64)
    v_noise = np.ascontiguousarray(v_noise, dtype=np.float64)
    w_noise = np.ascontiguousarray(w_noise, dtype=np.float64)

    x1v = np.asarray(x1, dtype=np.float64)
    if x1_mean is None:
        if x1v.ndim != 1:
            raise ValueError("x1_mean is required when x1 is per-trial")
        x1_mean = x1v
    x1_mean = np.asarray(x1_mean, dtype=np.float64)
    x1_all = np.array(np.broadcast_to(x1v, (trials, n)), dtype=np.float64, order="C")
    xhat1 = np.ascontiguousarray(np.asarray(xhat1, dtype=np.float64))
    P1 = np.ascontiguousarray(P1, dtype=np.float64)

    # X_k and W'_k are deterministic in the open loop: precompute per step
    X = np.outer(x1_mean, x1_mean) + P1
    w_eff_seq = np.empty((T, l, l))
    for k in range(T):
        if k > 0:
            X = A @ X @ A.T + V
            X = 0.5 * (X + X.T)
        pk = p_arr[k]
        w_eff_seq[k] = W + (pk - pk * pk) * (C @ X @ C.T)
    w_eff_seq = np.ascontiguousarray(w_eff_seq)

    out = {
        "x": np.zeros((trials, T, n)),
        "xhat_prior": np.zeros((trials, T, n)),
        "xhat_post": np.zeros((trials, T, n)),
        "y": np.zeros((trials, T, l)),
        "trace_ppost": np.zeros((trials, T)),
        "div_step": np.full(trials, -1, dtype=np.int64),
    }

    cdef double[:, ::1] A_mv = A, C_mv = C, V_mv = V, P1_mv = P1
    cdef double[:, ::1] x1_mv = x1_all
    cdef double[::1] xhat1_mv = xhat1
    cdef double[::1] p_mv = p_arr
    cdef double[:, :, ::1] weff_mv = w_eff_seq
    cdef unsigned char[:, ::1] st_mv = s_t, sr_mv = s_r
    cdef double[:, :, ::1] vn_mv = v_noise, wn_mv = w_noise
    cdef double[:, :, ::1] ox = out["x"], oxp = out["xhat_prior"], oxq = out["xhat_post"]
    cdef double[:, :, ::1] oy = out["y"]
    cdef double[:, ::1] otr = out["trace_ppost"]
    cdef long long[::1] odiv = out["div_step"]

    scratch = np.zeros(3 * n * n + 2 * n + l * n * 2 + l * l + 2 * l)
    cdef double[::1] sc = scratch
    cdef double* base = &sc[0]
    cdef double* x_b = base
    cdef double* xh_b = base + n
    cdef double* P_b = base + 2 * n
    cdef double* tmp_b = P_b + n * n
    cdef double* cp_b = tmp_b + n * n
    cdef double* smat_b = cp_b + l * n
    cdef double* kt_b = smat_b + l * l
    cdef double* y_b = kt_b + l * n
    cdef double* innov_b = y_b + l
    cdef Py_ssize_t t
    cdef long long dstep
    cdef int status = 0, rc

    with nogil:
        for t in range(trials):
            rc = _open_loop_trial(
                &A_mv[0, 0], &C_mv[0, 0], &V_mv[0, 0],
                &x1_mv[t, 0], &xhat1_mv[0], &P1_mv[0, 0],
                &p_mv[0], &weff_mv[0, 0, 0],
                &st_mv[t, 0], &sr_mv[t, 0],
                &vn_mv[t, 0, 0], &wn_mv[t, 0, 0],
                div_threshold, T, n, l,
                &ox[t, 0, 0], &oxp[t, 0, 0], &oxq[t, 0, 0],
                &oy[t, 0, 0], &otr[t, 0],
                x_b, xh_b, P_b, tmp_b, cp_b, smat_b, kt_b, y_b, innov_b,
                &dstep,
            )
            if rc != 0:
                status = rc
                break
            odiv[t] = dstep
    if status:
        raise ArithmeticError("innovation covariance lost positive definiteness")
    return out


cdef int _closed_loop_trial(
    const double* A, const double* B, const double* C,
    const double* BVBt, const double* W, const double* F, const double* u_ff,
    const double* x1, const double* xhat1, const double* P1, const double* X1,
    const double* p_seq, const double* pd0_seq,
    const unsigned char* s_t, const unsigned char* s_r,
    const double* v_noise, const double* w_noise,
    double div_threshold, Py_ssize_t T, Py_ssize_t n, Py_ssize_t m, Py_ssize_t l,
    double* out_x, double* out_xh_prior, double* out_xh_post,
    double* out_y, double* out_u, double* out_trace,
    double* x, double* xh, double* P, double* X, double* tmp_nn, double* tmp2_nn,
    double* cp, double* cx, double* s_mat, double* sll, double* kt,
    double* y, double* innov,
    double* u, double* bu, double* drive, double* xh_post,
    long long* div_step,
) noexcept nogil:
    cdef Py_ssize_t k, i, j, i2
    cdef double p, pd, tr, gate, st_gate
    div_step[0] = -1
    for i in range(n):
        x[i] = x1[i]
        xh[i] = xhat1[i]
    for i in range(n * n):
        P[i] = P1[i]
        X[i] = X1[i]

    for k in range(T):
        p = p_seq[k]
        gate = 1.0 if s_r[k] else 0.0
        st_gate = 1.0 if s_t[k] else 0.0

        # W' = W + (p - p^2) C X C^T; S = p^2 C P C^T + W'
        mat_mul(C, X, cx, l, n, n)
        mat_mul_bt(cx, C, s_mat, l, n, l)
        mat_mul(C, P, cp, l, n, n)
        for i in range(l * l):
            s_mat[i] = (p - p * p) * s_mat[i] + W[i]
        mat_mul_bt(cp, C, sll, l, n, l)
        for i in range(l * l):
            s_mat[i] = s_mat[i] + p * p * sll[i]
        for i in range(l * n):
            kt[i] = cp[i]
        if chol_solve(s_mat, kt, l, n):
            return 1
        for i in range(l * n):
            kt[i] = p * kt[i]

        # y = s_r (s_t C x + w)
        mat_vec(C, x, y, l, n)
        for i in range(l):
            y[i] = gate * (st_gate * y[i] + w_noise[k * l + i])

        # posterior
        for i in range(n):
            xh_post[i] = xh[i]
        if s_r[k]:
            mat_vec(C, xh, innov, l, n)
            for i in range(l):
                innov[i] = y[i] - p * innov[i]
            for i in range(n):
                for j in range(l):
                    xh_post[i] = xh_post[i] + kt[j * n + i] * innov[j]
            for i in range(n):
                for j in range(n):
                    tr = 0.0
                    for i2 in range(l):
                        tr += kt[i2 * n + i] * cp[i2 * n + j]
                    tmp_nn[i * n + j] = tr
            for i in range(n * n):
                P[i] = P[i] - p * tmp_nn[i]
            symmetrize_inplace(P, n)

        # control from the prior estimate
        for i in range(m):
            tr = u_ff[k * m + i]
            for j in range(n):
                tr -= F[i * n + j] * xh[j]
            u[i] = tr

        tr = 0.0
        for i in range(n):
            out_x[k * n + i] = x[i]
            out_xh_prior[k * n + i] = xh[i]
            out_xh_post[k * n + i] = xh_post[i]
            tr += P[i * n + i]
        for i in range(l):
            out_y[k * l + i] = y[i]
        for i in range(m):
            out_u[k * m + i] = u[i]
        out_trace[k] = tr

        if vec_norm(x, n) > div_threshold:
            div_step[0] = k + 1
            return 0
        if k + 1 >= T:
            break

        # plant transition: x <- A x + B s_t (s_r u + v[k])
        mat_vec(A, x, tmp_nn, n, n)
        for i in range(n):
            x[i] = tmp_nn[i]
        if s_t[k]:
            for i in range(n):
                tr = 0.0
                for j in range(m):
                    tr += B[i * m + j] * (gate * u[j] + v_noise[k * m + j])
                x[i] = x[i] + tr

        # control-aware prediction
        pd = p if s_r[k] else pd0_seq[k]
        for i in range(n):
            tr = 0.0
            for j in range(m):
                tr += B[i * m + j] * u[j]
            bu[i] = tr
        mat_vec(A, xh_post, drive, n, n)
        for i in range(n):
            drive[i] = drive[i] + p * gate * bu[i]
            xh[i] = drive[i]
        mat_mul(A, P, tmp_nn, n, n, n)
        mat_mul_bt(tmp_nn, A, tmp2_nn, n, n, n)
        for i in range(n):
            for j in range(n):
                P[i * n + j] = (tmp2_nn[i * n + j]
                                + (p - p * p) * gate * bu[i] * bu[j]
                                + pd * BVBt[i * n + j])
        symmetrize_inplace(P, n)
        for i in range(n):
            for j in range(n):
                X[i * n + j] = drive[i] * drive[j] + P[i * n + j]
        symmetrize_inplace(X, n)
    return 0


def simulate_closed_loop(A, B, C, V, W, F, u_ff, x1, xhat1, P1,
                         p_seq, pd0_seq, s_t, s_r, v_noise, w_noise,
                         double div_threshold=1e6, store_cov=False, x1_mean=None):
    if store_cov:
        from . import _numpy_impl
        return _numpy_impl.simulate_closed_loop(
            A, B, C, V, W, F, u_ff, x1, xhat1, P1, p_seq, pd0_seq,
            s_t, s_r, v_noise, w_noise,
            div_threshold=div_threshold, store_cov=True, x1_mean=x1_mean)

    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    V = np.ascontiguousarray(V, dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)
    F = np.ascontiguousarray(F, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t m = B.shape[1]
    cdef Py_ssize_t l = C.shape[0]
    s_t = np.ascontiguousarray(s_t, dtype=np.uint8)
    s_r = np.ascontiguousarray(s_r, dtype=np.uint8)
    cdef Py_ssize_t trials = s_r.shape[0]
    cdef Py_ssize_t T = s_r.shape[1]
    p_arr = np.ascontiguousarray(p_seq, dtype=np.float64)
    pd0_arr = np.ascontiguousarray(pd0_seq, dtype=np.float64)
    u_ff = np.ascontiguousarray(u_ff, dtype=np.float64)
    v_noise = np.ascontiguousarray(v_noise, dtype=np.float64)
    w_noise = np.ascontiguousarray(w_noise, dtype=np.float64)

    x1v = np.asarray(x1, dtype=np.float64)
    if x1_mean is None:
        if x1v.ndim != 1:
            raise ValueError("x1_mean is required when x1 is per-trial")
        x1_mean = x1v
    x1_mean = np.asarray(x1_mean, dtype=np.float64)
    x1_all = np.array(np.broadcast_to(x1v, (trials, n)), dtype=np.float64, order="C")
    xhat1 = np.ascontiguousarray(np.asarray(xhat1, dtype=np.float64))
    P1 = np.ascontiguousarray(P1, dtype=np.float64)
    X1 = np.ascontiguousarray(np.outer(x1_mean, x1_mean) + P1)
    BVBt = np.ascontiguousarray(B @ V @ B.T)

    out = {
        "x": np.zeros((trials, T, n)),
        "xhat_prior": np.zeros((trials, T, n)),
        "xhat_post": np.zeros((trials, T, n)),
        "y": np.zeros((trials, T, l)),
        "u": np.zeros((trials, T, m)),
        "trace_ppost": np.zeros((trials, T)),
        "div_step": np.full(trials, -1, dtype=np.int64),
    }

    cdef double[:, ::1] A_mv = A, B_mv = B, C_mv = C, W_mv = W, F_mv = F
    cdef double[:, ::1] BVBt_mv = BVBt, P1_mv = P1, X1_mv = X1, uff_mv = u_ff
    cdef double[:, ::1] x1_mv = x1_all
    cdef double[::1] xhat1_mv = xhat1
    cdef double[::1] p_mv = p_arr, pd0_mv = pd0_arr
    cdef unsigned char[:, ::1] st_mv = s_t, sr_mv = s_r
    cdef double[:, :, ::1] vn_mv = v_noise, wn_mv = w_noise
    cdef double[:, :, ::1] ox = out["x"], oxp = out["xhat_prior"], oxq = out["xhat_post"]
    cdef double[:, :, ::1] oy = out["y"], ou = out["u"]
    cdef double[:, ::1] otr = out["trace_ppost"]
    cdef long long[::1] odiv = out["div_step"]

    # scratch layout: x(n) xh(n) P(nn) X(nn) tmp(nn) tmp2(nn) cp(ln) cx(ln)
    #                 smat(ll) sll(ll) kt(ln) y(l) innov(l) u(m) bu(n)
    #                 drive(n) xhpost(n)
    scratch = np.zeros(5 * n + 4 * n * n + 3 * l * n + 2 * l * l + 2 * l + m)
    cdef double[::1] sc = scratch
    cdef double* base = &sc[0]
    cdef double* x_b = base
    cdef double* xh_b = x_b + n
    cdef double* P_b = xh_b + n
    cdef double* X_b = P_b + n * n
    cdef double* tmp_b = X_b + n * n
    cdef double* tmp2_b = tmp_b + n * n
    cdef double* cp_b = tmp2_b + n * n
    cdef double* cx_b = cp_b + l * n
    cdef double* smat_b = cx_b + l * n
    cdef double* sll_b = smat_b + l * l
    cdef double* kt_b = sll_b + l * l
    cdef double* y_b = kt_b + l * n
    cdef double* innov_b = y_b + l
    cdef double* u_b = innov_b + l
    cdef double* bu_b = u_b + m
    cdef double* drive_b = bu_b + n
    cdef double* xhpost_b = drive_b + n
    cdef Py_ssize_t t
    cdef long long dstep
    cdef int status = 0, rc

    with nogil:
        for t in range(trials):
            rc = _closed_loop_trial(
                &A_mv[0, 0], &B_mv[0, 0], &C_mv[0, 0],
                &BVBt_mv[0, 0], &W_mv[0, 0], &F_mv[0, 0], &uff_mv[0, 0],
                &x1_mv[t, 0], &xhat1_mv[0], &P1_mv[0, 0], &X1_mv[0, 0],
                &p_mv[0], &pd0_mv[0],
                &st_mv[t, 0], &sr_mv[t, 0],
                &vn_mv[t, 0, 0], &wn_mv[t, 0, 0],
                div_threshold, T, n, m, l,
                &ox[t, 0, 0], &oxp[t, 0, 0], &oxq[t, 0, 0],
                &oy[t, 0, 0], &ou[t, 0, 0], &otr[t, 0],
                x_b, xh_b, P_b, X_b, tmp_b, tmp2_b,
                cp_b, cx_b, smat_b, sll_b, kt_b, y_b, innov_b,
                u_b, bu_b, drive_b, xhpost_b,
                &dstep,
            )
            if rc != 0:
                status = rc
                break
            odiv[t] = dstep
    if status:
        raise ArithmeticError("innovation covariance lost positive definiteness")
    return out
