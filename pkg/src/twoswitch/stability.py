"""Stochastic stability analysis of the gated closed loop.

Two complementary tests:

Mean stability. The expectation of the joint (error, estimate) state is
driven by the block matrix built from ``A - p q B F`` and
``A - p q A K~_k C`` where ``K~_k = E[K_k]`` averages the filter gain over
receiver-switch histories. Both spectral radii must stay below one. The
gain expectation is computed either by exact enumeration of all switch
histories (with probability weights) or by Monte Carlo over sampled
histories; the two agree within sampling error and are tested against each
other.

Peak covariance. With no transmitter-only primary users (p = 1) the loop
reduces to a packet-loss system, and the covariance sampled at the recovery
instants ``beta_n`` (the first receive after each outage) forms the peak
covariance process. A sufficient condition for its stability combines the
outage statistics q with growth coefficients ``d_i = ||A^i (A^i)^T||``:

    (1 - q) q [1 + sum_{i=1..I-1} d_i q^i] sum_{j>=1} ||A^j||^2 (1-q)^{j-1} < 1

together with q >= 1 - 1 / max|lambda(A)|^2. Some statements of the
condition carry an extra leading factor d_1 in front of the bracket; the
reference numerical value for the pendulum instance (0.9997) corresponds
to the form above, so ``lhs`` reports that form and ``lhs_strict`` the
variant with the extra factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .channel import ChannelProbabilities
from .closed_loop import ClosedLoopModel, LinearController
from .errors import BudgetError, ValidationError
from .estimator import SystemModel
from .linalg import as_matrix, induced_two_norm, require_square, spectral_radius, symmetrize

EXACT_HISTORY_CAP = 20


# ---------------------------------------------------------------------------
# expected filter gain over switch histories


@dataclass(frozen=True)
class ExpectedGain:
    """E[K_k] with provenance of how it was computed."""

    k: int
    matrix: np.ndarray
    method: str                      # "exact" | "monte-carlo"
    histories: int
    stderr: np.ndarray | None = None  # per-entry MC standard error


def _gain_recursion_batched(model: SystemModel, p: float, s_r_hist: np.ndarray,
                            weights: np.ndarray | None, kmax: int):
    """Run the filter covariance recursion along many switch histories.

    ``s_r_hist`` has shape (batch, kmax - 1): entry [b, j] is the receiver
    switch at step j+1 of history b (the gain at step k depends on switches
    up to k-1 only). Yields the weighted-average gain at each step.
    """
    A, C, V, W = model.A, model.C, model.V, model.W
    n, l = model.n_states, model.n_outputs
    batch = s_r_hist.shape[0] if kmax > 1 else 1
    P = np.broadcast_to(model.P1, (batch, n, n)).copy()
    X = np.outer(model.x1, model.x1) + model.P1
    w = np.full(batch, 1.0 / batch) if weights is None else weights

    means = np.empty((kmax, n, l))
    second = np.empty((kmax, n, l)) if weights is None else None
    for k in range(1, kmax + 1):
        W_eff = W + (p - p * p) * (C @ X @ C.T)
        CP = np.einsum("ij,bjk->bik", C, P, optimize=True)
        S = p * p * np.einsum("bij,kj->bik", CP, C, optimize=True) + W_eff
        K = p * np.swapaxes(np.linalg.solve(S, CP), 1, 2)
        means[k - 1] = np.einsum("b,bij->ij", w, K, optimize=True)
        if second is not None:
            second[k - 1] = np.einsum("b,bij->ij", w, K * K, optimize=True)
        if k == kmax:
            break
        gate = s_r_hist[:, k - 1].astype(float)[:, None, None]
        P_post = P - gate * p * np.einsum("bij,bjk->bik", K, CP, optimize=True)
        P = symmetrize_batch(np.einsum("ij,bjk,lk->bil", A, P_post, A, optimize=True) + V)
        X = symmetrize(A @ X @ A.T + V)
    return means, second


def symmetrize_batch(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def _exact_histories(k: int, q: float):
    """All receiver-switch histories of length k-1 with their probabilities."""
    steps = k - 1
    if steps == 0:
        return np.zeros((1, 0), dtype=np.uint8), np.ones(1)
    if q in (0.0, 1.0):
        # degenerate switch: a single history carries all the mass
        return np.full((1, steps), int(q), dtype=np.uint8), np.ones(1)
    if steps > EXACT_HISTORY_CAP:
        raise BudgetError(
            f"exact enumeration needs 2^{steps} histories; cap is 2^{EXACT_HISTORY_CAP}. "
            "Use the monte-carlo method instead."
        )
    count = 1 << steps
    idx = np.arange(count, dtype=np.uint64)
    hist = ((idx[:, None] >> np.arange(steps, dtype=np.uint64)[None, :]) & 1).astype(np.uint8)
    ones = hist.sum(axis=1)
    weights = (q ** ones) * ((1.0 - q) ** (steps - ones))
    return hist, weights


def expected_gain_sequence(
    model: SystemModel,
    probs: ChannelProbabilities,
    kmax: int,
    method: str = "exact",
    budget: int = 100_000,
    seed: int = 0,
) -> list[ExpectedGain]:
    """E[K_k] for every k = 1..kmax in one pass."""
    if kmax < 1:
        raise ValidationError("kmax must be at least 1")
    p, q = probs.p, probs.q
    if method == "exact":
        hist, weights = _exact_histories(kmax, q)
        means, _ = _gain_recursion_batched(model, p, hist, weights, kmax)
        return [
            ExpectedGain(k=k, matrix=means[k - 1], method="exact",
                         histories=min(1 << (k - 1), hist.shape[0]))
            for k in range(1, kmax + 1)
        ]
    if method in ("monte-carlo", "mc"):
        if budget < 1:
            raise ValidationError("budget must be positive")
        rng = seeding.generator(seed, 0, seeding.SWITCH_STREAM)
        hist = (rng.random((budget, max(kmax - 1, 1))) < q).astype(np.uint8)
        means, second = _gain_recursion_batched(model, p, hist[:, : max(kmax - 1, 0)], None, kmax)
        out = []
        for k in range(1, kmax + 1):
            var = np.maximum(second[k - 1] - means[k - 1] ** 2, 0.0)
            stderr = np.sqrt(var / budget)
            out.append(ExpectedGain(k=k, matrix=means[k - 1], method="monte-carlo",
                                    histories=budget, stderr=stderr))
        return out
    raise ValidationError(f"unknown method {method!r}; use 'exact' or 'monte-carlo'")


def expected_gain(
    model: SystemModel,
    probs: ChannelProbabilities,
    k: int,
    method: str = "exact",
    budget: int = 100_000,
    seed: int = 0,
) -> ExpectedGain:
    """Expected filter gain at step k over receiver-switch histories.

    The exact method enumerates all 2^(k-1) histories, runs the filter
    covariance recursion on each, and probability-weights the gains; it
    refuses k - 1 > 20. The Monte Carlo method averages over ``budget``
    sampled histories and reports the per-entry standard error.
    """
    return expected_gain_sequence(model, probs, k, method=method, budget=budget, seed=seed)[-1]


# ---------------------------------------------------------------------------
# mean stability (expectation dynamics of the closed loop)


@dataclass(frozen=True)
class MeanStabilityReport:
    rho_control: float
    rho_estimation: tuple[float, ...]  # rho(A - p q A K~_k C) for k = 1..horizon
    verdict: bool
    method: str
    settled: bool       # successive rho change below 1e-6 at the window end
    horizon: int

    def to_dict(self) -> dict:
        return {
            "rho_control": self.rho_control,
            "rho_estimation": list(self.rho_estimation),
            "verdict": self.verdict,
            "method": self.method,
            "settled": self.settled,
            "horizon": self.horizon,
        }


def mean_stability(
    model: ClosedLoopModel,
    controller: LinearController | np.ndarray,
    probs: ChannelProbabilities,
    horizon: int,
    method: str = "auto",
    budget: int = 100_000,
    seed: int = 0,
) -> MeanStabilityReport:
    """Check both mean-stability conditions over a finite gain window.

    Condition one is exact: rho(A - p q B F) < 1. Condition two is checked
    for k = 1..horizon: rho(A - p q A E[K_k] C) < 1, with E[K_k] from the
    filter recursion driven by process noise B V B^T. The condition as
    stated quantifies over all k; the report carries the examined window
    plus a ``settled`` flag showing whether the sequence has numerically
    stopped moving (successive change below 1e-6).
    """
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    F = controller.F if isinstance(controller, LinearController) else as_matrix(controller, "F")
    p, q = probs.p, probs.q
    A, B, C = model.A, model.B, model.C
    rho_control = spectral_radius(A - p * q * (B @ F))

    if method == "auto":
        method = "exact" if horizon - 1 <= EXACT_HISTORY_CAP else "monte-carlo"
    gains = expected_gain_sequence(
        model.observation_model(), probs, horizon, method=method, budget=budget, seed=seed
    )
    rho_estimation = tuple(
        spectral_radius(A - p * q * (A @ g.matrix @ C)) for g in gains
    )
    settled = (
        len(rho_estimation) >= 2
        and abs(rho_estimation[-1] - rho_estimation[-2]) < 1e-6
    )
    verdict = bool(rho_control < 1.0 and all(r < 1.0 for r in rho_estimation))
    return MeanStabilityReport(
        rho_control=float(rho_control),
        rho_estimation=rho_estimation,
        verdict=verdict,
        method=method,
        settled=settled,
        horizon=horizon,
    )


# ---------------------------------------------------------------------------
# controllability / observability indices and growth coefficients


@dataclass(frozen=True)
class Indices:
    i1: int  # controllability index
    i0: int  # observability index

    @property
    def combined(self) -> int:
        return max(self.i0, self.i1)


def indices(A, B, C) -> Indices:
    """Smallest stack depths at which the structural matrices reach rank n.

    I1 is the least i with [B, AB, ..., A^(i-1) B] of rank n, I0 the least
    i with the stacked [C; CA; ...; C A^(i-1)] of rank n. Raises if rank n
    is never reached by i = n (then it never is).
    """
    A = require_square(A, "A")
    B = as_matrix(B, "B")
    C = as_matrix(C, "C")
    n = A.shape[0]

    i1 = None
    blocks = [B]
    for i in range(1, n + 1):
        if np.linalg.matrix_rank(np.hstack(blocks)) == n:
            i1 = i
            break
        blocks.append(A @ blocks[-1])
    if i1 is None:
        raise ValidationError("(A, B) is not controllable")

    i0 = None
    blocks = [C]
    for i in range(1, n + 1):
        if np.linalg.matrix_rank(np.vstack(blocks)) == n:
            i0 = i
            break
        blocks.append(blocks[-1] @ A)
    if i0 is None:
        raise ValidationError("(A, C) is not observable")
    return Indices(i1=i1, i0=i0)


def d_coefficients(A, count: int) -> np.ndarray:
    """Growth coefficients d_i = ||A^i (A^i)^T|| for i = 1..count."""
    A = require_square(A, "A")
    if count < 1:
        raise ValidationError("count must be at least 1")
    out = np.empty(count)
    power = np.eye(A.shape[0])
    for i in range(count):
        power = power @ A
        out[i] = induced_two_norm(power @ power.T)
    return out


# ---------------------------------------------------------------------------
# peak covariance sufficient condition


@dataclass(frozen=True)
class PeakCovReport:
    cond1: bool
    cond2: bool | None            # None when the series diverges
    lhs: float                    # bracket form matching the reference value
    lhs_strict: float             # with the extra leading d_1 factor
    I: int
    I0: int | None
    I1: int | None
    d: tuple[float, ...]
    truncation_terms: int
    series: float

    @property
    def holds(self) -> bool:
        return bool(self.cond1 and self.cond2)

    def to_dict(self) -> dict:
        return {
            "cond1": self.cond1,
            "cond2": self.cond2,
            "lhs": self.lhs,
            "lhs_strict": self.lhs_strict,
            "I": self.I,
            "I0": self.I0,
            "I1": self.I1,
            "d": list(self.d),
            "truncation_terms": self.truncation_terms,
            "series": self.series,
        }


def peak_cov_condition(
    A,
    q: float,
    d,
    I: int,
    tolerance: float = 1e-12,
    max_terms: int = 10_000_000,
    i0: int | None = None,
    i1: int | None = None,
) -> PeakCovReport:
    """Evaluate both peak-covariance stability conditions.

    ``d`` supplies the growth coefficients for the bracket (at least I - 1
    entries); the infinite series over outage lengths is computed from A
    directly and truncated once a term drops below ``tolerance`` times the
    partial sum, provided condition one guarantees geometric decay. If the
    series diverges the report carries lhs = inf and cond2 = None.
    """
    A = require_square(A, "A")
    if not (0.0 <= q <= 1.0):
        raise ValidationError(f"q must lie in [0, 1], got {q}")
    d = tuple(float(v) for v in np.atleast_1d(np.asarray(d, dtype=float)))
    if I < 1:
        raise ValidationError("I must be at least 1")
    if len(d) < I - 1:
        raise ValidationError(f"need at least I-1 = {I - 1} growth coefficients, got {len(d)}")

    rho = spectral_radius(A)
    cond1 = bool(q >= 1.0 - 1.0 / rho**2)
    decay = rho * rho * (1.0 - q)  # asymptotic term ratio

    if q == 1.0:
        series, terms = 0.0, 0
    elif decay >= 1.0:
        series, terms = float("inf"), 0
    else:
        series = 0.0
        terms = 0
        power = np.eye(A.shape[0])
        factor = 1.0
        prev_term = np.inf
        while terms < max_terms:
            power = power @ A
            term = induced_two_norm(power @ power.T) * factor
            series += term
            terms += 1
            factor *= 1.0 - q
            if term <= tolerance * series and term <= prev_term:
                break
            prev_term = term
        else:
            raise ValidationError("series did not truncate within max_terms")

    bracket = 1.0 + sum(d[i - 1] * q**i for i in range(1, I))
    if np.isinf(series):
        lhs = lhs_strict = float("inf")
        cond2 = None
    else:
        lhs = (1.0 - q) * q * bracket * series
        lhs_strict = lhs * (d[0] if d else 1.0)
        cond2 = bool(lhs < 1.0)
    return PeakCovReport(
        cond1=cond1,
        cond2=cond2,
        lhs=float(lhs),
        lhs_strict=float(lhs_strict),
        I=int(I),
        I0=i0,
        I1=i1,
        d=d,
        truncation_terms=terms,
        series=float(series),
    )


# ---------------------------------------------------------------------------
# stopping times and the peak covariance process


@dataclass(frozen=True)
class StoppingTimes:
    """Outage starts (alphas) and recoveries (betas), 1-based step indices."""

    alphas: tuple[int, ...]
    betas: tuple[int, ...]


@dataclass(frozen=True)
class PeakCovarianceSeries:
    betas: tuple[int, ...]
    values: tuple[np.ndarray, ...]
    norms: np.ndarray
    dropped_unclosed_run: bool = False

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("n,beta,norm\n")
            for i, (b, norm) in enumerate(zip(self.betas, self.norms), start=1):
                fh.write(f"{i},{b},{norm:.17g}\n")


def extract_peaks(s_r_sequence, covariance_sequence) -> tuple[StoppingTimes, PeakCovarianceSeries]:
    """Stopping times and covariance peaks from one switch realization.

    ``alpha_j`` is the first outage step after the previous recovery and
    ``beta_j`` the first step the channel is back; the peak series samples
    the covariance at each ``beta_j``. The sequence must start with
    ``s_r = 1``. A trailing outage that never recovers contributes no peak
    and is flagged on the returned series.
    """
    s_r = np.asarray(s_r_sequence).astype(np.int64).reshape(-1)
    covs = [np.atleast_2d(np.asarray(c, dtype=float)) for c in covariance_sequence]
    if len(covs) != len(s_r):
        raise ValidationError(
            f"switch sequence has {len(s_r)} steps but {len(covs)} covariances were given"
        )
    if len(s_r) == 0:
        raise ValidationError("empty switch sequence")
    if s_r[0] != 1:
        raise ValidationError("the switch sequence must start with s_r = 1")
    if not np.all((s_r == 0) | (s_r == 1)):
        raise ValidationError("s_r entries must be 0 or 1")

    alphas: list[int] = []
    betas: list[int] = []
    in_outage = False
    for k, s in enumerate(s_r, start=1):
        if not in_outage and s == 0:
            alphas.append(k)
            in_outage = True
        elif in_outage and s == 1:
            betas.append(k)
            in_outage = False
    dropped = in_outage
    if dropped:
        alphas = alphas[: len(betas)]

    values = tuple(covs[b - 1] for b in betas)
    norms = np.array([induced_two_norm(v) for v in values])
    return (
        StoppingTimes(alphas=tuple(alphas), betas=tuple(betas)),
        PeakCovarianceSeries(
            betas=tuple(betas), values=values, norms=norms, dropped_unclosed_run=dropped
        ),
    )


# ---------------------------------------------------------------------------
# second-moment recursion for the p = 1 reduction


def p1_second_moments(
    model: ClosedLoopModel,
    controller: LinearController | np.ndarray,
    s_r_path,
    shared_gate_probs: tuple[float, float] = (0.0, 1.0),
) -> dict:
    """Conditional second moments of (error, estimate) along a switch path.

    Valid for the p = 1 reduction, where the separation argument holds and
    the error covariance P and estimate second moment M evolve
    independently given the receiver switches:

        T_k     = s_r A P C^T (C P C^T + W)^-1 C P A^T
        P_{k+1} = A P A^T + p_j B V B^T - T_k
        M_{k+1} = A M A^T + T_k - s_r (B F M A^T + A M F^T B^T - B F M F^T B^T)

    ``p_j`` is the probability that the shared-region gate is open given
    the current receiver switch, as returned by
    :func:`twoswitch.channel.shared_inactive_given_sr`. Returns the block
    diagonal norms ||diag(P_k, M_k)|| along with both sequences.
    """
    F = controller.F if isinstance(controller, LinearController) else as_matrix(controller, "F")
    A, B, C, V, W = model.A, model.B, model.C, model.V, model.W
    s_r = np.asarray(s_r_path).astype(np.int64).reshape(-1)
    T = len(s_r)
    n = A.shape[0]
    P = model.P1.copy()
    M = np.outer(model.xhat1, model.xhat1)
    BVBt = B @ V @ B.T

    P_seq = np.empty((T, n, n))
    M_seq = np.empty((T, n, n))
    L_norm = np.empty(T)
    for k in range(T):
        P_seq[k] = P
        M_seq[k] = M
        L_norm[k] = max(induced_two_norm(P), induced_two_norm(M))
        gate = float(s_r[k])
        PCt = P @ C.T
        correction = np.linalg.solve(C @ PCt + W, PCt.T @ A.T)
        T_k = gate * (A @ PCt) @ correction
        p_j = shared_gate_probs[s_r[k]]
        P = symmetrize(A @ P @ A.T + p_j * BVBt - T_k)
        FM = F @ M
        M = symmetrize(
            A @ M @ A.T + T_k
            - gate * (B @ FM @ A.T + A @ FM.T @ B.T - B @ (FM @ F.T) @ B.T)
        )
    return {"P": P_seq, "M": M_seq, "L_norm": L_norm}
