"""Vectorized NumPy simulation kernels (fallback backend).

Same contract as the compiled core: batch over trials, step sequentially.
Trials that trip the divergence guard are frozen in place so later steps
neither overflow nor change their recorded values.

Conventions shared by both backends:

- arrays are float64; switches are uint8 of shape (trials, steps);
- open loop consumes process noise with arrival indexing
  (x_k = A x_{k-1} + v[k]); the closed loop uses departure indexing
  (x_{k+1} = A x_k + B s_t[k] (s_r[k] u_k + v[k])), matching the gating
  by the departure step's switches;
- ``p_seq`` and ``pd0_seq`` give the per-step conditional transmit
  probabilities (constant arrays for a single channel);
- ``div_step`` is the 1-based step at which a trial diverged, -1 if never.
"""

from __future__ import annotations

import numpy as np


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def simulate_open_loop(
    A, C, V, W, x1, xhat1, P1,
    p_seq, s_t, s_r, v_noise, w_noise,
    div_threshold=1e6, store_cov=False, x1_mean=None,
):
    A = np.asarray(A, float)
    C = np.asarray(C, float)
    V = np.asarray(V, float)
    W = np.asarray(W, float)
    n = A.shape[0]
    l = C.shape[0]
    trials, T = s_r.shape
    p_seq = np.asarray(p_seq, float)

    # x1 may be per-trial (trials, n); x1_mean then seeds the second moment
    x1v = np.asarray(x1, float)
    if x1_mean is None:
        if x1v.ndim != 1:
            raise ValueError("x1_mean is required when x1 is per-trial")
        x1_mean = x1v
    x1_mean = np.asarray(x1_mean, float)
    x = np.broadcast_to(x1v, (trials, n)).copy()
    xh = np.broadcast_to(np.asarray(xhat1, float), (trials, n)).copy()
    P = np.broadcast_to(np.asarray(P1, float), (trials, n, n)).copy()
    # X_1 = x1 x1^T + P1 is trial-independent in the open loop
    X = np.outer(x1_mean, x1_mean) + np.asarray(P1, float)

    out = {
        "x": np.zeros((trials, T, n)),
        "xhat_prior": np.zeros((trials, T, n)),
        "xhat_post": np.zeros((trials, T, n)),
        "y": np.zeros((trials, T, l)),
        "trace_ppost": np.zeros((trials, T)),
        "div_step": np.full(trials, -1, dtype=np.int64),
    }
    if store_cov:
        out["P_prior"] = np.zeros((trials, T, n, n))
        out["P_post"] = np.zeros((trials, T, n, n))
        out["X"] = np.zeros((T, n, n))
        out["K"] = np.zeros((trials, T, n, l))
        out["W_eff"] = np.zeros((T, l, l))

    active = np.ones(trials, dtype=bool)
    sr_f = s_r.astype(float)
    st_f = s_t.astype(float)

    for k in range(T):
        if k > 0:
            x_new = x @ A.T + v_noise[:, k, :]
            xh_new = xh @ A.T
            P_new = _sym(np.einsum("ij,tjk,lk->til", A, P, A, optimize=True) + V)
            X = _sym(A @ X @ A.T + V)
            x = np.where(active[:, None], x_new, x)
            xh = np.where(active[:, None], xh_new, xh)
            P = np.where(active[:, None, None], P_new, P)

        p = p_seq[k]
        W_eff = W + (p - p * p) * (C @ X @ C.T)
        CP = np.einsum("ij,tjk->tik", C, P, optimize=True)
        S = p * p * np.einsum("tij,kj->tik", CP, C, optimize=True) + W_eff
        K = p * np.swapaxes(np.linalg.solve(S, CP), 1, 2)

        y = sr_f[:, k, None] * (st_f[:, k, None] * (x @ C.T) + w_noise[:, k, :])
        innov = y - p * (xh @ C.T)
        gate = (sr_f[:, k] * active)[:, None]
        xh_post = xh + gate * np.einsum("tij,tj->ti", K, innov, optimize=True)
        P_post = _sym(P - gate[:, :, None] * p * np.einsum("tij,tjk->tik", K, CP, optimize=True))

        newly = active & (np.linalg.norm(x, axis=1) > div_threshold)
        out["div_step"][newly] = k + 1

        out["x"][:, k] = x
        out["xhat_prior"][:, k] = xh
        out["xhat_post"][:, k] = np.where(active[:, None], xh_post, xh)
        out["y"][:, k] = np.where(active[:, None], y, 0.0)
        out["trace_ppost"][:, k] = np.einsum("tii->t", P_post)
        if store_cov:
            out["P_prior"][:, k] = P
            out["P_post"][:, k] = P_post
            out["X"][k] = X
            out["K"][:, k] = K
            out["W_eff"][k] = W_eff

        xh = np.where(active[:, None], xh_post, xh)
        P = np.where(active[:, None, None], P_post, P)
        active = active & ~newly

    return out


def simulate_closed_loop(
    A, B, C, V, W, F, u_ff, x1, xhat1, P1,
    p_seq, pd0_seq, s_t, s_r, v_noise, w_noise,
    div_threshold=1e6, store_cov=False, x1_mean=None,
):
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    C = np.asarray(C, float)
    V = np.asarray(V, float)
    W = np.asarray(W, float)
    F = np.asarray(F, float)
    n = A.shape[0]
    m = B.shape[1]
    l = C.shape[0]
    trials, T = s_r.shape
    p_seq = np.asarray(p_seq, float)
    pd0_seq = np.asarray(pd0_seq, float)
    u_ff = np.asarray(u_ff, float)
    BVBt = B @ V @ B.T

    x1v = np.asarray(x1, float)
    if x1_mean is None:
        if x1v.ndim != 1:
            raise ValueError("x1_mean is required when x1 is per-trial")
        x1_mean = x1v
    x1_mean = np.asarray(x1_mean, float)
    x = np.broadcast_to(x1v, (trials, n)).copy()
    xh = np.broadcast_to(np.asarray(xhat1, float), (trials, n)).copy()
    P = np.broadcast_to(np.asarray(P1, float), (trials, n, n)).copy()
    X = np.broadcast_to(np.outer(x1_mean, x1_mean) + np.asarray(P1, float), (trials, n, n)).copy()

    out = {
        "x": np.zeros((trials, T, n)),
        "xhat_prior": np.zeros((trials, T, n)),
        "xhat_post": np.zeros((trials, T, n)),
        "y": np.zeros((trials, T, l)),
        "u": np.zeros((trials, T, m)),
        "trace_ppost": np.zeros((trials, T)),
        "div_step": np.full(trials, -1, dtype=np.int64),
    }
    if store_cov:
        out["P_prior"] = np.zeros((trials, T, n, n))
        out["P_post"] = np.zeros((trials, T, n, n))
        out["X"] = np.zeros((trials, T, n, n))
        out["K"] = np.zeros((trials, T, n, l))
        out["W_eff"] = np.zeros((trials, T, l, l))

    active = np.ones(trials, dtype=bool)
    sr_f = s_r.astype(float)
    st_f = s_t.astype(float)

    for k in range(T):
        p = p_seq[k]
        # measurement update
        W_eff = W + (p - p * p) * np.einsum("ij,tjk,lk->til", C, X, C, optimize=True)
        CP = np.einsum("ij,tjk->tik", C, P, optimize=True)
        S = p * p * np.einsum("tij,kj->tik", CP, C, optimize=True) + W_eff
        K = p * np.swapaxes(np.linalg.solve(S, CP), 1, 2)

        y = sr_f[:, k, None] * (st_f[:, k, None] * (x @ C.T) + w_noise[:, k, :])
        innov = y - p * (xh @ C.T)
        gate = (sr_f[:, k] * active)[:, None]
        xh_post = xh + gate * np.einsum("tij,tj->ti", K, innov, optimize=True)
        P_post = _sym(P - gate[:, :, None] * p * np.einsum("tij,tjk->tik", K, CP, optimize=True))

        # control from the prior estimate
        u = -(xh @ F.T) + u_ff[k]

        newly = active & (np.linalg.norm(x, axis=1) > div_threshold)
        out["div_step"][newly] = k + 1

        out["x"][:, k] = x
        out["xhat_prior"][:, k] = xh
        out["xhat_post"][:, k] = np.where(active[:, None], xh_post, xh)
        out["y"][:, k] = np.where(active[:, None], y, 0.0)
        out["u"][:, k] = np.where(active[:, None], u, 0.0)
        out["trace_ppost"][:, k] = np.einsum("tii->t", P_post)
        if store_cov:
            out["P_prior"][:, k] = P
            out["P_post"][:, k] = P_post
            out["X"][:, k] = X
            out["K"][:, k] = K
            out["W_eff"][:, k] = W_eff

        active = active & ~newly
        if k + 1 >= T:
            break

        # plant transition gated by the departure step's switches
        drive_true = sr_f[:, k, None] * u + v_noise[:, k, :]
        x_new = x @ A.T + st_f[:, k, None] * (drive_true @ B.T)

        # control-aware prediction
        p_d = np.where(sr_f[:, k] > 0, p, pd0_seq[k])
        Bu = u @ B.T
        drive = xh_post @ A.T + p * sr_f[:, k, None] * Bu
        P_pred = _sym(
            np.einsum("ij,tjk,lk->til", A, P_post, A, optimize=True)
            + (p - p * p) * sr_f[:, k, None, None] * np.einsum("ti,tj->tij", Bu, Bu)
            + p_d[:, None, None] * BVBt
        )
        X_new = _sym(np.einsum("ti,tj->tij", drive, drive) + P_pred)

        x = np.where(active[:, None], x_new, x)
        xh = np.where(active[:, None], drive, xh)
        P = np.where(active[:, None, None], P_pred, P)
        X = np.where(active[:, None, None], X_new, X)

    return out
