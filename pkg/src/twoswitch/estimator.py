"""Optimal linear estimator for a plant observed through a two-switch link.

The plant is ``x_k = A x_{k-1} + v_k`` with measurement
``y_k = s_r^k (s_t^k C x_k + w_k)``. The receiver knows its own switch
``s_r`` but never ``s_t``; only ``p = P(s_t=1 | s_r=1)`` enters the filter.
Compared to a standard Kalman filter, the measurement update carries the
switch statistics in three places:

- the innovation is formed against ``p C xhat`` instead of ``C xhat``,
- the innovation covariance uses ``p^2 C P C^T`` plus an inflated noise
  ``W' = W + (p - p^2) C X C^T`` where ``X_k = E[x_k x_k^T]`` follows the
  deterministic recursion ``X_{k+1} = A X_k A^T + V`` from
  ``X_1 = x_1 x_1^T + P_1``,
- no correction is applied at all while ``s_r = 0`` (the receiver is
  silent and the measurement is zero by construction).

With p = q = 1 every extra term vanishes and the recursion is exactly the
textbook Kalman filter.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import seeding
from .channel import ChannelProbabilities, ChannelSchedule, PuTopology, probabilities, sample_batch, step_probabilities
from .errors import DimensionError, NumericError, ValidationError
from .linalg import as_matrix, is_pd, is_psd, psd_factor, require_square, symmetrize
from .records import TrajectoryRecord


@dataclass(frozen=True)
class SystemModel:
    """Open-loop plant and noise description.

    ``V`` must be positive semidefinite and ``W`` positive definite (W
    guards the innovation inversion). ``x1`` is the true initial state used
    to seed the second-moment sequence; when only an initial estimate is
    known pass it as both ``x1`` and ``xhat1``.
    """

    A: np.ndarray
    C: np.ndarray
    V: np.ndarray
    W: np.ndarray
    x1: np.ndarray
    P1: np.ndarray
    xhat1: np.ndarray | None = None

    def __post_init__(self):
        A = require_square(self.A, "A")
        n = A.shape[0]
        C = as_matrix(self.C, "C")
        if C.shape[1] != n:
            raise DimensionError(f"C must have {n} columns, got {C.shape}")
        V = require_square(self.V, "V")
        if V.shape[0] != n:
            raise DimensionError(f"V must be {n}x{n}, got {V.shape}")
        W = require_square(self.W, "W")
        if W.shape[0] != C.shape[0]:
            raise DimensionError(f"W must be {C.shape[0]}x{C.shape[0]}, got {W.shape}")
        if not is_psd(V):
            raise ValidationError("V must be positive semidefinite")
        if not is_pd(W):
            raise ValidationError("W must be positive definite")
        x1 = np.asarray(self.x1, dtype=float).reshape(-1)
        if x1.shape[0] != n:
            raise DimensionError(f"x1 must have length {n}, got {x1.shape[0]}")
        P1 = require_square(self.P1, "P1")
        if P1.shape[0] != n or not is_psd(P1):
            raise ValidationError("P1 must be a positive semidefinite n x n matrix")
        xhat1 = x1 if self.xhat1 is None else np.asarray(self.xhat1, dtype=float).reshape(-1)
        if xhat1.shape[0] != n:
            raise DimensionError(f"xhat1 must have length {n}, got {xhat1.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "V", symmetrize(V))
        object.__setattr__(self, "W", symmetrize(W))
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "P1", symmetrize(P1))
        object.__setattr__(self, "xhat1", xhat1)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class FilterState:
    """Filter quantities at one step.

    ``x_prior``/``P_prior`` refer to the estimate before the step's
    measurement, ``x_post``/``P_post`` after it. ``X`` is the second-moment
    matrix E[x_k x_k^T] and ``W_eff`` the inflated measurement noise used
    by the last update (None before the first update).
    """

    k: int
    x_prior: np.ndarray
    x_post: np.ndarray
    P_prior: np.ndarray
    P_post: np.ndarray
    K: np.ndarray | None
    X: np.ndarray
    W_eff: np.ndarray | None


def init(model: SystemModel) -> FilterState:
    """State at step 1 before the first measurement.

    X_1 = x1 x1^T + P1. When the true initial state is unknown the model's
    ``x1`` already holds the initial estimate, which approximates the
    second moment accordingly.
    """
    x1 = model.x1
    xhat1 = model.xhat1
    X1 = symmetrize(np.outer(x1, x1) + model.P1)
    return FilterState(
        k=1,
        x_prior=xhat1.copy(),
        x_post=xhat1.copy(),
        P_prior=model.P1.copy(),
        P_post=model.P1.copy(),
        K=None,
        X=X1,
        W_eff=None,
    )


def predict(state: FilterState, model: SystemModel) -> FilterState:
    """Time update: posterior at step k to prior at step k+1."""
    A, V = model.A, model.V
    x_prior = A @ state.x_post
    P_prior = symmetrize(A @ state.P_post @ A.T + V)
    X = symmetrize(A @ state.X @ A.T + V)
    return replace(
        state,
        k=state.k + 1,
        x_prior=x_prior,
        x_post=x_prior,
        P_prior=P_prior,
        P_post=P_prior,
        X=X,
        W_eff=None,
    )


def gain_and_innovation_cov(
    P_prior: np.ndarray, X: np.ndarray, p: float, C: np.ndarray, W: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gain K, effective noise W', and innovation covariance S for one update.

        W' = W + (p - p^2) C X C^T
        S  = p^2 C P C^T + W'
        K  = p P C^T S^-1

    Shared verbatim by the open-loop and closed-loop updates.
    """
    W_eff = symmetrize(W + (p - p * p) * (C @ X @ C.T))
    S = symmetrize(p * p * (C @ P_prior @ C.T) + W_eff)
    try:
        cho = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericError("innovation covariance is not positive definite") from exc
    smallest_pivot = float(np.min(np.diag(cho))) ** 2
    if smallest_pivot < 1e-12 * max(np.linalg.norm(W_eff, 2), np.finfo(float).tiny):
        raise NumericError("innovation covariance is numerically singular")
    rhs = p * (P_prior @ C.T)
    K = np.linalg.solve(S, rhs.T).T
    return K, W_eff, S


def update(
    state: FilterState,
    y: np.ndarray,
    s_r: int,
    p: float,
    model: SystemModel,
) -> FilterState:
    """Measurement update with switch-aware gain.

    ``y`` is the received signal; it is forced to zero internally whenever
    ``s_r = 0`` regardless of what the caller passes, because an inactive
    receiver outputs nothing. With ``s_r = 0`` the posterior equals the
    prior and only the bookkeeping quantities (K, W') are refreshed.
    """
    if not (0.0 <= p <= 1.0):
        raise ValidationError(f"p must lie in [0, 1], got {p}")
    C, W = model.C, model.W
    K, W_eff, _ = gain_and_innovation_cov(state.P_prior, state.X, p, C, W)
    if s_r:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != model.n_outputs:
            raise DimensionError(f"y must have length {model.n_outputs}, got {y.shape[0]}")
        innovation = y - p * (C @ state.x_prior)
        x_post = state.x_prior + K @ innovation
        P_post = symmetrize(state.P_prior - p * (K @ C @ state.P_prior))
    else:
        x_post = state.x_prior.copy()
        P_post = state.P_prior.copy()
    return replace(state, x_post=x_post, P_post=P_post, K=K, W_eff=W_eff)


def _resolve_step_probs(channel, horizon: int):
    """Per-step (topology, probabilities) pairs for a topology or schedule."""
    if isinstance(channel, PuTopology):
        probs = probabilities(channel)
        return [(channel, probs)] * horizon
    if isinstance(channel, ChannelSchedule):
        if len(channel.selection) < horizon:
            raise ValidationError(
                f"schedule covers {len(channel.selection)} steps, horizon is {horizon}"
            )
        return [
            (channel.channels[channel.selection[k] - 1], step_probabilities(channel, k + 1))
            for k in range(horizon)
        ]
    raise ValidationError("channel must be a PuTopology or a ChannelSchedule")


def run_filter(
    model: SystemModel,
    channel: PuTopology | ChannelSchedule,
    horizon: int,
    rng: int | np.random.Generator,
) -> tuple[list[FilterState], TrajectoryRecord]:
    """Simulate the plant through the channel and filter every step.

    Reference implementation composed from :func:`predict` and
    :func:`update`; the batch simulation kernels are checked against it.
    The generator (or seed) is split into independent switch and noise
    streams so channel realizations do not depend on the noise dimension.
    """
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    switch_rng, noise_rng = seeding.spawn_pair(rng)
    steps = _resolve_step_probs(channel, horizon)

    n, l = model.n_states, model.n_outputs
    Lv = psd_factor(model.V)
    Lw = np.linalg.cholesky(model.W)

    switches = np.empty((horizon, 2), dtype=np.uint8)
    for k, (topo, _) in enumerate(steps):
        s_t, s_r = sample_batch(topo, switch_rng, 1)
        switches[k, 0] = s_t[0]
        switches[k, 1] = s_r[0]
    v_noise = (Lv @ noise_rng.standard_normal((horizon, n)).T).T
    w_noise = (Lw @ noise_rng.standard_normal((horizon, l)).T).T

    states: list[FilterState] = []
    state = init(model)
    x = model.x1.copy()
    xs = np.empty((horizon, n))
    xh_prior = np.empty((horizon, n))
    xh_post = np.empty((horizon, n))
    ys = np.zeros((horizon, l))
    trace_p = np.empty(horizon)

    for k in range(horizon):
        if k > 0:
            x = model.A @ x + v_noise[k]
            state = predict(state, model)
        s_t, s_r = int(switches[k, 0]), int(switches[k, 1])
        y = s_r * (s_t * (model.C @ x) + w_noise[k])
        p = steps[k][1].p
        state = update(state, y, s_r, p, model)
        states.append(state)
        xs[k] = x
        xh_prior[k] = state.x_prior
        xh_post[k] = state.x_post
        ys[k] = y
        trace_p[k] = np.trace(state.P_post)

    record = TrajectoryRecord(
        x=xs,
        xhat_prior=xh_prior,
        xhat_post=xh_post,
        y=ys,
        u=None,
        s_t=switches[:, 0].copy(),
        s_r=switches[:, 1].copy(),
        trace_p_post=trace_p,
    )
    return states, record
