"""Scalar dynamic-programming oracle for the separation-failure demo.

For the closed loop over two gated links the error covariance depends on
the applied control, so the classical separation argument breaks down. This
module makes that visible numerically: it runs backward induction over the
information state (xhat, P) of the scalar system and reports the minimizing
control u*(xhat, P) at every backward step.

The oracle treats the conditional state density as N(xhat, P), takes the
expectation over the current transmit gate, the next step's joint switch
outcome, and the next measurement (Gauss-Hermite quadrature on the
innovation), and evaluates the next value table by bilinear interpolation,
extended quadratically along xhat and linearly along P beyond the grid.
Any consistent oracle of this kind suffices to expose the effect: with
p < 1 the minimizer at a fixed xhat moves with P, while for p = 1 the
ratio u*/xhat is constant over the whole grid and a linear controller is
optimal.

Cost convention: stage cost Q xhat-squared terms via E[x Q x | I] =
Q (xhat^2 + P), control cost E[s_t s_r u R u | I], terminal cost
Q_N (xhat^2 + P).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelProbabilities
from .closed_loop import ClosedLoopModel
from .errors import ValidationError


@dataclass(frozen=True)
class BackwardStep:
    """Policy and value tables at one backward-induction step."""

    steps_to_go: int
    u_star: np.ndarray        # (nx, nP), minimizing control when s_r = 1
    value: np.ndarray         # (nx, nP), value when the control is live (s_r = 1)
    value_silent: np.ndarray  # (nx, nP), value when s_r = 0


@dataclass(frozen=True)
class DpDemoResult:
    xhat_grid: np.ndarray
    p_grid: np.ndarray
    u_grid: np.ndarray
    steps: tuple[BackwardStep, ...]

    @property
    def u_resolution(self) -> float:
        return float(self.u_grid[1] - self.u_grid[0])

    def final(self) -> BackwardStep:
        """Deepest backward step (most steps to go)."""
        return self.steps[-1]

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("steps_to_go,xhat,P,u_star,value\n")
            for step in self.steps:
                for i, xh in enumerate(self.xhat_grid):
                    for j, pv in enumerate(self.p_grid):
                        fh.write(
                            f"{step.steps_to_go},{xh:.17g},{pv:.17g},"
                            f"{step.u_star[i, j]:.17g},{step.value[i, j]:.17g}\n"
                        )


def _mix_p_columns(table: np.ndarray, pg: np.ndarray, pq_flat: np.ndarray) -> np.ndarray:
    """Interpolate the table along P (linear, extrapolating) per query point.

    Returns an (len(xg), n_points) array: one x-profile per query.
    """
    pq_in = np.clip(pq_flat, pg[0], pg[-1])
    ip = np.clip(np.searchsorted(pg, pq_in) - 1, 0, len(pg) - 2)
    tp = (pq_flat - pg[ip]) / (pg[ip + 1] - pg[ip])
    return table[:, ip] * (1 - tp) + table[:, ip + 1] * tp


def _interp_x_profiles(profiles: np.ndarray, xg: np.ndarray, xq_flat: np.ndarray) -> np.ndarray:
    """Evaluate per-point x-profiles at per-point queries.

    Linear inside the grid, one-sided quadratic beyond it: the value grows
    like xhat^2, so clamped or linear tails would bias the minimizer toward
    controls that throw the state off-grid (and visibly break the p = 1
    linearity check).
    """
    cols = np.arange(profiles.shape[1])
    xq_in = np.clip(xq_flat, xg[0], xg[-1])
    ix = np.clip(np.searchsorted(xg, xq_in) - 1, 0, len(xg) - 2)
    tx = (xq_in - xg[ix]) / (xg[ix + 1] - xg[ix])
    out = profiles[ix, cols] * (1 - tx) + profiles[ix + 1, cols] * tx

    lo = xq_flat < xg[0]
    if np.any(lo):
        h0, h1 = xg[1] - xg[0], xg[2] - xg[1]
        v0, v1, v2 = profiles[0], profiles[1], profiles[2]
        d1 = (v1 - v0) / h0
        d2 = (v2 - v1) / h1
        ddx = (d2 - d1) / (h0 + h1)
        dx = xq_flat - xg[0]
        out = np.where(lo, v0 + d1 * dx + ddx * dx * (dx - h0), out)
    hi = xq_flat > xg[-1]
    if np.any(hi):
        h0, h1 = xg[-2] - xg[-3], xg[-1] - xg[-2]
        v0, v1, v2 = profiles[-3], profiles[-2], profiles[-1]
        d1 = (v1 - v0) / h0
        d2 = (v2 - v1) / h1
        ddx = (d2 - d1) / (h0 + h1)
        dx = xq_flat - xg[-1]
        out = np.where(hi, v2 + d2 * dx + ddx * dx * (dx + h1), out)
    return out


def _expected_next_value(
    v_live: np.ndarray, v_silent: np.ndarray,
    xg: np.ndarray, pg: np.ndarray,
    xhat: np.ndarray, P: np.ndarray, u: np.ndarray,
    s_r: int, gate_prob: float,
    a: float, b: float, c: float, v_in: float, w: float,
    probs: ChannelProbabilities,
    gh_nodes: np.ndarray, gh_weights: np.ndarray,
) -> np.ndarray:
    """E[V_next] for broadcastable (xhat, P, u) under current switch s_r.

    ``gate_prob`` is P(s_t = 1 | s_r) for the current step: it governs both
    whether the control reaches the plant and whether the input noise does.
    The posterior covariance P' does not depend on the realized gates, so
    the P-interpolation of the next value table is hoisted out of the
    quadrature loop.
    """
    p = probs.p
    q = probs.q
    p_d = probs.p_d(s_r)

    shape = np.broadcast_shapes(np.shape(xhat), np.shape(P), np.shape(u))
    xhat_b = np.broadcast_to(xhat, shape).reshape(-1)
    P_b = np.broadcast_to(P, shape).reshape(-1)
    u_b = np.broadcast_to(u, shape).reshape(-1)

    xhat_pred = a * xhat_b + p * s_r * b * u_b
    P_pred = a * a * P_b + (p - p * p) * s_r * (b * u_b) ** 2 + p_d * b * b * v_in
    X_pred = xhat_pred**2 + P_pred

    w_eff = w + (p - p * p) * c * c * X_pred
    S = p * p * c * c * P_pred + w_eff
    K = p * P_pred * c / S
    P_upd = P_pred - p * K * c * P_pred

    # next receiver silent: no update, both current-gate branches coincide
    silent_prof = _mix_p_columns(v_silent, pg, P_pred)
    total = (1.0 - q) * _interp_x_profiles(silent_prof, xg, xhat_pred)

    live_prof = _mix_p_columns(v_live, pg, P_upd)
    root2 = np.sqrt(2.0)
    inv_sqrt_pi = 1.0 / np.sqrt(np.pi)

    # next receiver live: integrate the innovation per current-gate branch
    for g, w_g in ((1, gate_prob), (0, 1.0 - gate_prob)):
        if w_g == 0.0:
            continue
        true_mean = a * xhat_b + g * s_r * b * u_b
        true_var = a * a * P_b + g * b * b * v_in
        for s_t_next, w_next in ((1, p * q), (0, (1.0 - p) * q)):
            if w_next == 0.0:
                continue
            if s_t_next:
                nu_mean = c * true_mean - p * c * xhat_pred
                sigma = np.sqrt(c * c * true_var + w)
            else:
                nu_mean = -p * c * xhat_pred
                sigma = np.sqrt(w)
            acc = 0.0
            for z, w_z in zip(gh_nodes, gh_weights):
                xhat_next = xhat_pred + K * (nu_mean + root2 * sigma * z)
                acc = acc + w_z * _interp_x_profiles(live_prof, xg, xhat_next)
            total = total + (w_g * w_next * inv_sqrt_pi) * acc
    return total.reshape(shape)


def separation_demo(
    model: ClosedLoopModel,
    probs: ChannelProbabilities,
    horizon: int,
    xhat_grid,
    p_grid,
    u_grid=None,
    gh_points: int = 15,
    u_chunk: int = 32,
) -> DpDemoResult:
    """Backward induction over the (xhat, P) information state.

    ``horizon`` counts control steps before the terminal cost. The returned
    steps are ordered by increasing steps-to-go, so ``result.final()`` is
    the policy with the full horizon ahead of it. Minimization is a grid
    search over ``u_grid`` refined by one parabolic fit around the best
    grid point.
    """
    if model.n_states != 1 or model.n_inputs != 1 or model.n_outputs != 1:
        raise ValidationError("separation_demo requires a scalar system")
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    xg = np.asarray(xhat_grid, dtype=float)
    pg = np.asarray(p_grid, dtype=float)
    if xg.ndim != 1 or len(xg) < 3:
        raise ValidationError("xhat_grid needs at least 3 points")
    if pg.ndim != 1 or len(pg) < 3:
        raise ValidationError("p_grid needs at least 3 points")
    if np.any(np.diff(xg) <= 0) or np.any(np.diff(pg) <= 0):
        raise ValidationError("grids must be strictly increasing")
    if np.any(pg <= 0):
        raise ValidationError("p_grid must be strictly positive")

    a = float(model.A[0, 0])
    b = float(model.B[0, 0])
    c = float(model.C[0, 0])
    v_in = float(model.V[0, 0])
    w = float(model.W[0, 0])
    q_cost = float(model.Q[0, 0]) if model.Q is not None else 1.0
    qn_cost = float(model.QN[0, 0]) if model.QN is not None else q_cost
    r_cost = float(model.R[0, 0]) if model.R is not None else 0.0

    if u_grid is None:
        reach = 3.0 * max(abs(xg[0]), abs(xg[-1]))
        u_grid = np.linspace(-reach, reach, 241)
    ug = np.asarray(u_grid, dtype=float)
    if len(ug) < 3:
        raise ValidationError("u_grid needs at least 3 points")
    du = float(ug[1] - ug[0])

    nodes, weights = np.polynomial.hermite.hermgauss(gh_points)

    XH, PP = np.meshgrid(xg, pg, indexing="ij")
    stage = q_cost * (XH**2 + PP)

    v_live = qn_cost * (XH**2 + PP)
    v_silent = v_live.copy()
    steps: list[BackwardStep] = []

    gate_live = probs.p          # P(s_t=1 | s_r=1)
    gate_silent = probs.p_d0     # P(s_t=1 | s_r=0)

    for step_idx in range(1, horizon + 1):
        obj = np.empty((len(xg), len(pg), len(ug)))
        for lo in range(0, len(ug), u_chunk):
            hi = min(lo + u_chunk, len(ug))
            u_blk = ug[lo:hi][None, None, :]
            exp_next = _expected_next_value(
                v_live, v_silent, xg, pg,
                XH[:, :, None], PP[:, :, None], u_blk,
                s_r=1, gate_prob=gate_live,
                a=a, b=b, c=c, v_in=v_in, w=w,
                probs=probs, gh_nodes=nodes, gh_weights=weights,
            )
            obj[:, :, lo:hi] = probs.p * r_cost * u_blk**2 + exp_next

        best = np.argmin(obj, axis=2)
        ii, jj = np.meshgrid(np.arange(len(xg)), np.arange(len(pg)), indexing="ij")
        f_best = obj[ii, jj, best]
        u_best = ug[best]

        # parabolic refinement where the minimum is interior
        interior = (best > 0) & (best < len(ug) - 1)
        bi = np.clip(best, 1, len(ug) - 2)
        f_m = obj[ii, jj, bi - 1]
        f_0 = obj[ii, jj, bi]
        f_p = obj[ii, jj, bi + 1]
        curv = f_p - 2.0 * f_0 + f_m
        ok = interior & (curv > 1e-12)
        shift = np.where(ok, 0.5 * (f_m - f_p) / np.where(ok, curv, 1.0), 0.0)
        shift = np.clip(shift, -1.0, 1.0)
        u_star = u_best + shift * du
        f_star = np.where(ok, f_0 - 0.125 * (f_p - f_m) ** 2 / np.where(ok, curv, 1.0), f_best)

        new_live = stage + f_star
        exp_next_silent = _expected_next_value(
            v_live, v_silent, xg, pg,
            XH, PP, np.zeros_like(XH),
            s_r=0, gate_prob=gate_silent,
            a=a, b=b, c=c, v_in=v_in, w=w,
            probs=probs, gh_nodes=nodes, gh_weights=weights,
        )
        new_silent = stage + exp_next_silent

        steps.append(BackwardStep(
            steps_to_go=step_idx,
            u_star=u_star,
            value=new_live,
            value_silent=new_silent,
        ))
        v_live, v_silent = new_live, new_silent

    return DpDemoResult(xhat_grid=xg, p_grid=pg, u_grid=ug, steps=tuple(steps))
