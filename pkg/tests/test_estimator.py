import numpy as np
import pytest
from numpy.testing import assert_allclose

from twoswitch.channel import PuTopology, probabilities
from twoswitch.errors import ValidationError
from twoswitch.estimator import (
    FilterState,
    SystemModel,
    gain_and_innovation_cov,
    init,
    predict,
    run_filter,
    update,
)
from twoswitch.linalg import nearest_psd, symmetrize

PEND_A = np.array([
    [1.0000, -0.0002, 0.0010, -0.0000],
    [0.0000,  0.9996, 0.0001,  0.0010],
    [0.0315, -0.3901, 1.0518, -0.0417],
    [0.0726, -0.8763, 0.1193,  0.9038],
])
PEND_C = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
PEND_W = 0.001 * np.eye(2)
PEND_V_RAW = np.array([
    [0.0100, 0.0090, 0.0020, 0.0050],
    [0.0060, 0.0100, 0.0080, 0.0060],
    [0.0040, 0.0080, 0.0030, 0.0070],
    [0.0090, 0.0040, 0.0050, 0.0100],
])
# printed asymmetric and indefinite after symmetrizing; project onto PSD
PEND_V = nearest_psd(symmetrize(PEND_V_RAW))


def pendulum_model(x1=None, P1=None, xhat1=None):
    return SystemModel(
        A=PEND_A, C=PEND_C, V=PEND_V, W=PEND_W,
        x1=np.zeros(4) if x1 is None else x1,
        P1=np.eye(4) if P1 is None else P1,
        xhat1=xhat1,
    )


def scalar_model(a=1.0, c=1.0, v=0.1, w=1.0, x1=0.0, p1=1.0):
    return SystemModel(A=[[a]], C=[[c]], V=[[v]], W=[[w]], x1=[x1], P1=[[p1]])


class TestInit:
    def test_zero_state_identity_cov(self):
        m = pendulum_model()
        st = init(m)
        assert_allclose(st.X, np.eye(4))
        assert st.k == 1

    def test_scalar_second_moment(self):
        st = init(scalar_model(x1=2.0, p1=1.0))
        assert st.X[0, 0] == pytest.approx(5.0)  # 4 + 1

    def test_pendulum_x1_psd(self):
        x1 = np.array([1.0, 0.1, 0.0, 0.0])
        st = init(pendulum_model(x1=x1))
        assert np.min(np.linalg.eigvalsh(st.X)) >= -1e-12
        assert_allclose(st.X, np.outer(x1, x1) + np.eye(4))

    def test_indefinite_noise_rejected(self):
        with pytest.raises(ValidationError):
            SystemModel(A=[[1.0]], C=[[1.0]], V=[[-1.0]], W=[[1.0]], x1=[0.0], P1=[[1.0]])
        with pytest.raises(ValidationError):
            SystemModel(A=[[1.0]], C=[[1.0]], V=[[1.0]], W=[[0.0]], x1=[0.0], P1=[[1.0]])


class TestPredict:
    def test_identity_no_noise(self):
        m = SystemModel(A=np.eye(2), C=np.eye(2), V=np.zeros((2, 2)),
                        W=np.eye(2), x1=[1.0, 2.0], P1=np.eye(2))
        st = predict(init(m), m)
        assert_allclose(st.x_prior, [1.0, 2.0])
        assert_allclose(st.P_prior, np.eye(2))
        assert st.k == 2

    def test_scalar_doubling(self):
        m = scalar_model(a=2.0, v=1.0, x1=0.0, p1=1.0)
        st = predict(init(m), m)
        assert st.P_prior[0, 0] == pytest.approx(5.0)  # 4*1 + 1

    def test_pendulum_one_step_matches_hand_arithmetic(self):
        m = pendulum_model(x1=np.array([1.0, 0.1, 0.0, 0.0]))
        st0 = init(m)
        st1 = predict(st0, m)
        assert_allclose(st1.X, PEND_A @ st0.X @ PEND_A.T + PEND_V, atol=1e-14)
        assert_allclose(st1.x_prior, PEND_A @ st0.x_post, atol=1e-15)


class TestUpdate:
    def test_silent_receiver_is_identity(self):
        m = pendulum_model()
        st = predict(init(m), m)
        upd = update(st, np.full(2, 123.0), s_r=0, p=0.8, model=m)
        assert_allclose(upd.x_post, st.x_prior)
        assert_allclose(upd.P_post, st.P_prior)

    def test_p_one_is_textbook_kalman_update(self):
        m = pendulum_model()
        st = predict(init(m), m)
        y = np.array([0.3, -0.2])
        upd = update(st, y, s_r=1, p=1.0, model=m)
        S = PEND_C @ st.P_prior @ PEND_C.T + PEND_W
        K = st.P_prior @ PEND_C.T @ np.linalg.inv(S)
        assert_allclose(upd.W_eff, PEND_W, atol=1e-12)
        assert_allclose(upd.K, K, atol=1e-10)
        assert_allclose(upd.x_post, st.x_prior + K @ (y - PEND_C @ st.x_prior), atol=1e-10)

    def test_worked_scalar_example(self):
        # a=c=1, W=1, V=0.1, P_prior=1, X=2, p=0.5, s_r=1, y=1, x_prior=0
        m = scalar_model()
        st = FilterState(
            k=1,
            x_prior=np.array([0.0]), x_post=np.array([0.0]),
            P_prior=np.array([[1.0]]), P_post=np.array([[1.0]]),
            K=None, X=np.array([[2.0]]), W_eff=None,
        )
        upd = update(st, [1.0], s_r=1, p=0.5, model=m)
        assert upd.W_eff[0, 0] == pytest.approx(1.5)
        assert upd.K[0, 0] == pytest.approx(2.0 / 7.0)
        assert upd.x_post[0] == pytest.approx(2.0 / 7.0)
        assert upd.P_post[0, 0] == pytest.approx(6.0 / 7.0)

    def test_covariance_never_grows_at_update(self):
        rng = np.random.default_rng(31)
        m = pendulum_model()
        for _ in range(100):
            P = rng.normal(size=(4, 4))
            P = P @ P.T + 1e-3 * np.eye(4)
            X = rng.normal(size=(4, 4))
            X = X @ X.T
            st = FilterState(
                k=1, x_prior=rng.normal(size=4), x_post=np.zeros(4),
                P_prior=P, P_post=P, K=None, X=X, W_eff=None,
            )
            p = rng.uniform(0, 1)
            s_r = int(rng.integers(0, 2))
            upd = update(st, rng.normal(size=2), s_r=s_r, p=p, model=m)
            assert np.trace(upd.P_post) <= np.trace(st.P_prior) + 1e-9
            # posterior below prior in the semidefinite order as well
            assert np.min(np.linalg.eigvalsh(st.P_prior - upd.P_post)) >= -1e-9

    def test_gain_minimizes_posterior_trace(self):
        # perturbing K away from the computed gain can only raise the trace
        # of the exact posterior covariance form
        rng = np.random.default_rng(5)
        m = pendulum_model()
        P = rng.normal(size=(4, 4))
        P = P @ P.T + 0.1 * np.eye(4)
        X = P @ P.T + np.eye(4)
        p = 0.6
        K, W_eff, _ = gain_and_innovation_cov(P, X, p, PEND_C, PEND_W)

        def posterior_trace(Kmat):
            closed = np.eye(4) - p * Kmat @ PEND_C
            return np.trace(closed @ P @ closed.T + Kmat @ W_eff @ Kmat.T)

        base = posterior_trace(K)
        for _ in range(60):
            direction = rng.normal(size=K.shape)
            direction /= np.linalg.norm(direction)
            for delta in (1e-4, -1e-4):
                assert posterior_trace(K + delta * direction) >= base - 1e-12


def textbook_kalman(A, C, V, W, xhat0, P0, ys):
    """Joseph-form reference filter, written independently of the package."""
    xs, Ps = [], []
    xhat, P = np.array(xhat0, float), np.array(P0, float)
    identity = np.eye(len(xhat0))
    first = True
    for y in ys:
        if not first:
            xhat = A @ xhat
            P = A @ P @ A.T + V
        first = False
        S = C @ P @ C.T + W
        K = P @ C.T @ np.linalg.inv(S)
        xhat = xhat + K @ (y - C @ xhat)
        closed = identity - K @ C
        P = closed @ P @ closed.T + K @ W @ K.T
        xs.append(xhat.copy())
        Ps.append(P.copy())
    return np.array(xs), np.array(Ps)


class TestRunFilter:
    def topo(self, ps):
        return PuTopology(h=1, m=1, o=1, inactivity=tuple(ps))

    def test_zero_noise_perfect_channel_zero_error(self):
        m = SystemModel(A=PEND_A, C=PEND_C, V=np.zeros((4, 4)), W=1e-12 * np.eye(2),
                        x1=np.array([1.0, 0.1, 0.0, 0.0]), P1=np.zeros((4, 4)))
        states, record = run_filter(m, self.topo([1.0, 1.0, 1.0]), horizon=50, rng=0)
        assert_allclose(record.x, record.xhat_post, atol=1e-6)

    def test_perfect_channel_matches_textbook_kalman(self):
        m = pendulum_model(x1=np.array([1.0, 0.1, 0.0, 0.0]))
        states, record = run_filter(m, self.topo([1.0, 1.0, 1.0]), horizon=100, rng=7)
        xs, Ps = textbook_kalman(PEND_A, PEND_C, PEND_V, PEND_W,
                                 m.xhat1, np.eye(4), record.y)
        scale = np.maximum(np.abs(xs), 1.0)
        assert np.max(np.abs(record.xhat_post - xs) / scale) < 1e-9
        for st, P_ref in zip(states, Ps):
            assert np.max(np.abs(st.P_post - P_ref)) < 1e-9

    def test_lossy_channel_estimates_track(self):
        # cold start far from the true state; the estimation error must
        # shrink from the first to the last quarter on both outputs
        m = pendulum_model(
            x1=np.array([1.0, 0.2, 0.0, 0.0]),
            xhat1=np.array([-5.0, -3.0, 0.0, 0.0]),
            P1=np.diag([36.0, 10.0, 1.0, 1.0]),
        )
        states, record = run_filter(m, self.topo([0.8, 0.8, 0.8]), horizon=3000, rng=1)
        err = record.x - record.xhat_post
        first = np.mean(err[:750, :2] ** 2, axis=0)
        last = np.mean(err[-750:, :2] ** 2, axis=0)
        assert np.all(last < first)
        assert np.all(np.isfinite(record.trace_p_post))
        assert record.trace_p_post.max() < 1e3

    def test_determinism(self):
        m = pendulum_model()
        _, r1 = run_filter(m, self.topo([0.8, 0.8, 0.8]), horizon=64, rng=11)
        _, r2 = run_filter(m, self.topo([0.8, 0.8, 0.8]), horizon=64, rng=11)
        assert np.array_equal(r1.x, r2.x)
        assert np.array_equal(r1.s_r, r2.s_r)


class TestConsistency:
    def test_reported_covariance_matches_empirical(self):
        # common receiver-switch path across trials, fresh transmit gates
        # and noises; the filter P then equals the trial-averaged MSE
        from twoswitch._kernels import numpy_backend

        rng = np.random.default_rng(17)
        pr = probabilities(PuTopology(h=1, m=1, o=1, inactivity=(0.5, 0.8, 0.8)))
        horizon, trials = 50, 10_000

        s_r_path = (rng.random(horizon) < pr.q).astype(np.uint8)
        s_r = np.tile(s_r_path, (trials, 1))
        gate_prob = np.where(s_r_path == 1, pr.p, pr.p_d0)
        s_t = (rng.random((trials, horizon)) < gate_prob[None, :]).astype(np.uint8)
        v_noise = np.sqrt(0.1) * rng.standard_normal((trials, horizon, 1))
        w_noise = rng.standard_normal((trials, horizon, 1))
        x1 = 1.0 + rng.standard_normal((trials, 1))  # N(xhat1, P1)

        out = numpy_backend.simulate_open_loop(
            A=[[1.0]], C=[[1.0]], V=[[0.1]], W=[[1.0]],
            x1=x1, xhat1=[1.0], P1=[[1.0]], x1_mean=[1.0],
            p_seq=np.full(horizon, pr.p), s_t=s_t, s_r=s_r,
            v_noise=v_noise, w_noise=w_noise, store_cov=True,
        )
        err = out["x"][:, :, 0] - out["xhat_post"][:, :, 0]
        emp = np.mean(err**2, axis=0)
        P_path = out["P_post"][0, :, 0, 0]  # identical across trials here
        for k in (9, 49):
            assert abs(emp[k] - P_path[k]) / P_path[k] < 0.10

    def test_second_moment_recursion_matches_empirical(self):
        from twoswitch._kernels import numpy_backend

        rng = np.random.default_rng(23)
        horizon, trials = 40, 20_000
        s = np.ones((trials, horizon), dtype=np.uint8)
        v_noise = np.sqrt(0.2) * rng.standard_normal((trials, horizon, 1))
        w_noise = rng.standard_normal((trials, horizon, 1))
        # X_1 = x1 x1^T + P1 treats the initial state as distributed around
        # its mean with covariance P1, so simulate exactly that
        x1 = 1.5 + np.sqrt(0.5) * rng.standard_normal((trials, 1))
        out = numpy_backend.simulate_open_loop(
            A=[[0.9]], C=[[1.0]], V=[[0.2]], W=[[1.0]],
            x1=x1, xhat1=[1.5], P1=[[0.5]], x1_mean=[1.5],
            p_seq=np.ones(horizon), s_t=s, s_r=s,
            v_noise=v_noise, w_noise=w_noise, store_cov=True,
        )
        emp_X = np.mean(out["x"][:, :, 0] ** 2, axis=0)
        X_path = out["X"][:, 0, 0]
        for k in range(horizon):
            assert abs(emp_X[k] - X_path[k]) / X_path[k] < 0.10
