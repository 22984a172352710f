"""Closed-loop estimation and control over two two-switch links.

The plant is driven through the same kind of gated link it is observed
through:

    x_{k+1} = A x_k + B s_t^k (s_r^k u_k + v_k)
    y_k     = s_r^k (s_t^k C x_k + w_k)

The estimator and controller are co-located, so both see ``s_r`` but never
``s_t``. Two consequences separate this from standard LQG:

- the one-step covariance prediction inflates with the control,
  ``P_{k+1|k} = A P_{k|k} A^T + p(1-p) s_r B u u^T B^T + p_d B V B^T``,
  where ``p_d`` is the transmit availability given the current receiver
  switch (p when s_r = 1, p_d0 otherwise), and
- the second moment becomes control-dependent,
  ``X_{k+1} = (A xhat_{k|k} + p s_r B u)(...)^T + P_{k+1|k}``,
  which feeds back into the gain through W'.

Because the error covariance depends on the control input, the optimal
controller is not a linear function of the state estimate; see
:mod:`twoswitch.separation` for the numerical demonstration. The linear
controllers here are deliberately suboptimal: a fixed gain on the prior
estimate, optionally redesigned against the availability-scaled input
matrix p q B.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelProbabilities
from .errors import DimensionError, ValidationError
from .estimator import FilterState, SystemModel, gain_and_innovation_cov
from .linalg import as_matrix, lqr_gain, require_square, symmetrize


@dataclass(frozen=True)
class ClosedLoopModel:
    """Plant, link noises, and optional cost weights for controller synthesis.

    ``V`` is the covariance of the input-channel noise (m x m); it reaches
    the state as ``B s_t v_k``. Cost weights Q and R are only needed when a
    controller is synthesized from this model.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    V: np.ndarray
    W: np.ndarray
    x1: np.ndarray
    P1: np.ndarray
    xhat1: np.ndarray | None = None
    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    QN: np.ndarray | None = None

    def __post_init__(self):
        base = SystemModel(
            A=self.A, C=self.C,
            V=np.eye(require_square(self.A, "A").shape[0]),
            W=self.W, x1=self.x1, P1=self.P1, xhat1=self.xhat1,
        )
        B = as_matrix(self.B, "B")
        if B.shape[0] != base.n_states:
            raise DimensionError(f"B must have {base.n_states} rows, got {B.shape}")
        V = require_square(self.V, "V")
        if V.shape[0] != B.shape[1]:
            raise DimensionError(f"V must be {B.shape[1]}x{B.shape[1]}, got {V.shape}")
        vmin = float(np.min(np.linalg.eigvalsh(symmetrize(V))))
        if vmin < -1e-9:
            raise ValidationError("V must be positive semidefinite")
        object.__setattr__(self, "A", base.A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", base.C)
        object.__setattr__(self, "V", symmetrize(V))
        object.__setattr__(self, "W", base.W)
        object.__setattr__(self, "x1", base.x1)
        object.__setattr__(self, "P1", base.P1)
        object.__setattr__(self, "xhat1", base.xhat1)
        if self.Q is not None:
            object.__setattr__(self, "Q", require_square(self.Q, "Q"))
        if self.R is not None:
            object.__setattr__(self, "R", require_square(self.R, "R"))
        if self.QN is not None:
            object.__setattr__(self, "QN", require_square(self.QN, "QN"))

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def observation_model(self) -> SystemModel:
        """Equivalent open-loop model with process noise B V B^T.

        This is the model the stability analysis runs the gain recursion
        on: the plant noise enters through the input matrix.
        """
        return SystemModel(
            A=self.A, C=self.C,
            V=symmetrize(self.B @ self.V @ self.B.T),
            W=self.W, x1=self.x1, P1=self.P1, xhat1=self.xhat1,
        )


@dataclass(frozen=True)
class ClFilterState(FilterState):
    """Filter state plus the control bookkeeping of the closed loop."""

    u_prev: np.ndarray | None = None
    p_d: float | None = None


def cl_init(model: ClosedLoopModel) -> ClFilterState:
    """Closed-loop filter state at step 1 before the first measurement."""
    x1, xhat1 = model.x1, model.xhat1
    X1 = symmetrize(np.outer(x1, x1) + model.P1)
    return ClFilterState(
        k=1,
        x_prior=xhat1.copy(),
        x_post=xhat1.copy(),
        P_prior=model.P1.copy(),
        P_post=model.P1.copy(),
        K=None,
        X=X1,
        W_eff=None,
        u_prev=None,
        p_d=None,
    )


def cl_predict(
    state: ClFilterState,
    u: np.ndarray,
    s_r: int,
    probs: ChannelProbabilities,
    model: ClosedLoopModel,
) -> ClFilterState:
    """Control-aware time update from the posterior at step k.

    ``s_r`` is the current step's receiver switch, which the co-located
    controller observes directly. The control reaches the plant only when
    both switches are up, hence the expected drive ``p s_r B u`` and the
    variance inflation ``p (1 - p) s_r B u u^T B^T``.
    """
    A, B, V = model.A, model.B, model.V
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != model.n_inputs:
        raise DimensionError(f"u must have length {model.n_inputs}, got {u.shape[0]}")
    s_r = int(bool(s_r))
    p = probs.p
    p_d = probs.p_d(s_r)
    Bu = B @ u
    drive = A @ state.x_post + p * s_r * Bu
    P_prior = symmetrize(
        A @ state.P_post @ A.T
        + (p - p * p) * s_r * np.outer(Bu, Bu)
        + p_d * (B @ V @ B.T)
    )
    X = symmetrize(np.outer(drive, drive) + P_prior)
    return replace(
        state,
        k=state.k + 1,
        x_prior=drive,
        x_post=drive,
        P_prior=P_prior,
        P_post=P_prior,
        X=X,
        W_eff=None,
        u_prev=u,
        p_d=p_d,
    )


def cl_update(
    state: ClFilterState,
    y: np.ndarray,
    s_r: int,
    p: float,
    model: ClosedLoopModel,
) -> ClFilterState:
    """Measurement update; identical arithmetic to the open-loop update."""
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


@dataclass(frozen=True)
class LinearController:
    """Static feedback u = -F xhat_{k|k-1} + N r on the prior estimate.

    ``feedforward`` defaults to zero; set it through
    :func:`dc_feedforward` to track a step reference.
    """

    F: np.ndarray
    feedforward: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "F", as_matrix(self.F, "F"))


def control(ctrl: LinearController, state: FilterState, reference: float = 0.0) -> np.ndarray:
    """Control vector applied at the state's step."""
    F = ctrl.F
    if F.shape[1] != state.x_prior.shape[0]:
        raise DimensionError(
            f"F has {F.shape[1]} columns but the state has {state.x_prior.shape[0]} entries"
        )
    u = -(F @ state.x_prior)
    if reference:
        u = u + ctrl.feedforward * reference
    return u


def scaled_lqr_gain(A, B, probs: ChannelProbabilities, Q, R) -> LinearController:
    """LQR redesign against the availability-scaled input matrix p q B.

    On average the plant sees the control through both switches, so the
    effective deterministic system is x_{k+1} = A x_k + p q B u_k. The
    returned gain satisfies rho(A - p q B F) < 1 whenever the synthesis
    succeeds.
    """
    pq = probs.p * probs.q
    if pq <= 0.0:
        raise ValidationError("p * q must be positive for a scaled LQR design")
    F = lqr_gain(np.asarray(A, float), pq * as_matrix(B, "B"), Q, R)
    return LinearController(F=F)


def dc_feedforward(A, B_design, F, C=None, output_row: int = 0) -> float:
    """Feedforward scale N giving unit DC gain from r to one output.

    Computed on the deterministic design loop x_{k+1} = A x + B_design u,
    u = -F x + N r, so the loop's steady output ``(C x)[output_row]``
    equals the reference (the state coordinate itself when C is omitted).
    Single-input only.
    """
    A = require_square(A, "A")
    B_design = as_matrix(B_design, "B_design")
    F = as_matrix(F, "F")
    if B_design.shape[1] != 1:
        raise DimensionError("dc_feedforward supports single-input systems only")
    closed = np.eye(A.shape[0]) - A + B_design @ F
    x_ss = np.linalg.solve(closed, B_design[:, 0])
    outputs = x_ss if C is None else as_matrix(C, "C") @ x_ss
    if not (0 <= output_row < outputs.shape[0]):
        raise DimensionError(f"output_row {output_row} out of range")
    gain = float(outputs[output_row])
    if gain == 0.0:
        raise ValidationError("reference output has zero DC gain; cannot scale")
    return 1.0 / gain
