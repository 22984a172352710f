"""Monte Carlo experiment harness over the simulation kernels.

Trials are embarrassingly parallel: trial ``i`` derives its own switch and
noise streams from the scenario seed through the splitmix64 scheme in
:mod:`twoswitch.seeding`, workers write results into preallocated
per-trial slots, and every reduction runs in trial-index order after the
pool drains. Outputs are therefore byte-identical across thread counts.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import seeding
from ._kernels import BACKEND_NAME, simulate_closed_loop, simulate_open_loop
from .channel import ChannelSchedule, PuTopology, probabilities, sample_batch
from .closed_loop import LinearController, dc_feedforward, scaled_lqr_gain
from .errors import ValidationError
from .linalg import lqr_gain, psd_factor
from .records import RunSummary, Stopwatch, TrajectoryRecord
from .scenario import Scenario

DIVERGENCE_THRESHOLD = 1e6


def _per_step_probs(channel, horizon):
    """(p, p_d0) arrays plus the per-step topology list for switch sampling."""
    if isinstance(channel, PuTopology):
        pr = probabilities(channel)
        return (np.full(horizon, pr.p), np.full(horizon, pr.p_d0), [channel] * horizon)
    if isinstance(channel, ChannelSchedule):
        p = np.empty(horizon)
        pd0 = np.empty(horizon)
        topos = []
        for k in range(horizon):
            topo = channel.channels[channel.selection[k] - 1]
            pr = probabilities(topo)
            p[k] = pr.p
            pd0[k] = pr.p_d0
            topos.append(topo)
        return p, pd0, topos
    raise ValidationError("channel must be a PuTopology or a ChannelSchedule")


def _design_probabilities(scenario: Scenario):
    """Statistics the controller and filter are built against."""
    channel = scenario.assumed_channel or scenario.channel
    if isinstance(channel, ChannelSchedule):
        # design against the first scheduled channel
        return probabilities(channel.channels[channel.selection[0] - 1])
    return probabilities(channel)


def resolve_controller(scenario: Scenario) -> LinearController | None:
    """Materialize the controller gain and feedforward for a scenario.

    The feedforward normalizes the DC gain of the mean design loop
    x+ = A x + pq B u, since the plant sees the control through both
    switches on average; with p = q = 1 this is the nominal loop.
    """
    spec = scenario.controller
    if spec.type == "none":
        return None
    model = scenario.model
    pr = _design_probabilities(scenario)
    if spec.type == "fixed":
        F = spec.F
    elif spec.type == "lqr":
        F = lqr_gain(model.A, model.B, model.Q, model.R)
    else:  # scaled-lqr
        F = scaled_lqr_gain(model.A, model.B, pr, model.Q, model.R).F
    feedforward = 0.0
    if scenario.reference.type != "none":
        feedforward = dc_feedforward(
            model.A, pr.p * pr.q * model.B, F,
            C=model.C, output_row=scenario.reference.output_row,
        )
    return LinearController(F=F, feedforward=feedforward)


def _filter_step_probs(scenario: Scenario, horizon: int):
    """Per-step (p, p_d0) the estimator uses (assumed channel if present)."""
    channel = scenario.assumed_channel or scenario.channel
    p, pd0, _ = _per_step_probs(channel, horizon)
    return p, pd0


def _simulate_chunk(scenario: Scenario, controller, lo: int, hi: int,
                    p_seq, pd0_seq, topos, noise_factors):
    model = scenario.model
    horizon = scenario.horizon
    n = model.n_states
    l = model.n_outputs
    Lv, Lw = noise_factors
    count = hi - lo
    s_t = np.empty((count, horizon), dtype=np.uint8)
    s_r = np.empty((count, horizon), dtype=np.uint8)
    v_dim = Lv.shape[0]
    v_noise = np.empty((count, horizon, v_dim))
    w_noise = np.empty((count, horizon, l))
    for idx, trial in enumerate(range(lo, hi)):
        switch_rng = seeding.generator(scenario.seed, trial, seeding.SWITCH_STREAM)
        noise_rng = seeding.generator(scenario.seed, trial, seeding.NOISE_STREAM)
        if all(t is topos[0] for t in topos):
            st, sr = sample_batch(topos[0], switch_rng, horizon)
        else:
            st = np.empty(horizon, dtype=np.uint8)
            sr = np.empty(horizon, dtype=np.uint8)
            for k, topo in enumerate(topos):
                st_k, sr_k = sample_batch(topo, switch_rng, 1)
                st[k], sr[k] = st_k[0], sr_k[0]
        s_t[idx], s_r[idx] = st, sr
        v_noise[idx] = noise_rng.standard_normal((horizon, v_dim)) @ Lv.T
        w_noise[idx] = noise_rng.standard_normal((horizon, l)) @ Lw.T

    if scenario.kind == "open-loop":
        out = simulate_open_loop(
            model.A, model.C, model.V, model.W,
            model.x1, model.xhat1, model.P1,
            p_seq, s_t, s_r, v_noise, w_noise,
            div_threshold=DIVERGENCE_THRESHOLD,
        )
    else:
        r_seq = scenario.reference.sequence(horizon)
        u_ff = (controller.feedforward * r_seq)[:, None] * np.ones(model.n_inputs)
        out = simulate_closed_loop(
            model.A, model.B, model.C, model.V, model.W,
            controller.F, u_ff,
            model.x1, model.xhat1, model.P1,
            p_seq, pd0_seq, s_t, s_r, v_noise, w_noise,
            div_threshold=DIVERGENCE_THRESHOLD,
        )
    return out, s_t, s_r


def run(scenario: Scenario, out_dir=None, threads: int = 1,
        trajectories: int | None = None) -> RunSummary:
    """Run all trials of a scenario; optionally write CSVs and a summary.

    Deterministic in (scenario, seed) regardless of ``threads``. Writes
    ``trajectory_<i>.csv`` for the first ``trajectories`` trials plus
    ``summary.json`` when ``out_dir`` is given.
    """
    if threads < 1:
        raise ValidationError("threads must be at least 1")
    n_traj = scenario.trajectories if trajectories is None else trajectories
    if not (0 <= n_traj <= scenario.trials):
        raise ValidationError("trajectories must lie in [0, trials]")

    model = scenario.model
    horizon, trials = scenario.horizon, scenario.trials
    controller = resolve_controller(scenario)
    p_seq, pd0_seq = _filter_step_probs(scenario, horizon)
    _, _, topos = _per_step_probs(scenario.channel, horizon)
    noise_factors = (psd_factor(model.V), np.linalg.cholesky(model.W))

    n, l = model.n_states, model.n_outputs
    m = model.n_inputs if scenario.kind == "closed-loop" else 0
    x = np.empty((trials, horizon, n))
    xh_prior = np.empty((trials, horizon, n))
    xh_post = np.empty((trials, horizon, n))
    ys = np.empty((trials, horizon, l))
    us = np.empty((trials, horizon, m)) if m else None
    s_ts = np.empty((trials, horizon), dtype=np.uint8)
    s_rs = np.empty((trials, horizon), dtype=np.uint8)
    trace_p = np.empty((trials, horizon))
    div_step = np.empty(trials, dtype=np.int64)

    # fixed chunk size: batch shapes (and therefore the exact floating-point
    # evaluation inside the vectorized backend) must not depend on --threads
    chunk_size = 16
    chunks = [(lo, min(lo + chunk_size, trials)) for lo in range(0, trials, chunk_size)]

    def work(bounds):
        lo, hi = bounds
        out, s_t, s_r = _simulate_chunk(scenario, controller, lo, hi,
                                        p_seq, pd0_seq, topos, noise_factors)
        x[lo:hi] = out["x"]
        xh_prior[lo:hi] = out["xhat_prior"]
        xh_post[lo:hi] = out["xhat_post"]
        ys[lo:hi] = out["y"]
        if us is not None:
            us[lo:hi] = out["u"]
        trace_p[lo:hi] = out["trace_ppost"]
        div_step[lo:hi] = out["div_step"]
        s_ts[lo:hi] = s_t
        s_rs[lo:hi] = s_r

    with Stopwatch() as clock:
        if threads == 1:
            for bounds in chunks:
                work(bounds)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, chunks))

        # reductions in fixed trial order
        alive = np.ones((trials, horizon), dtype=bool)
        for t in range(trials):
            if div_step[t] > 0:
                alive[t, div_step[t]:] = False
        err = x - xh_post
        err_sq = np.einsum("tkn,tkn->tk", err, err)
        alive_count = alive.sum(axis=0)
        with np.errstate(invalid="ignore"):
            emp_trace = np.where(
                alive_count > 0,
                (err_sq * alive).sum(axis=0) / np.maximum(alive_count, 1),
                np.nan,
            )
        out_err = np.einsum("lj,tkj->tkl", model.C, err)
        quarter = max(horizon // 4, 1)

        def window_mse(sl):
            w_alive = alive[:, sl]
            w_err = out_err[:, sl, :] ** 2
            denom = np.maximum(w_alive.sum(), 1)
            return [(float((w_err[:, :, j] * w_alive).sum() / denom)) for j in range(l)]

        diverged = div_step > 0
        summary = RunSummary(
            trials=trials,
            horizon=horizon,
            seed=scenario.seed,
            divergence_rate=float(np.mean(diverged)),
            empirical_error_trace=[float(v) for v in emp_trace],
            mse_first_quarter=window_mse(slice(0, quarter)),
            mse_final_quarter=window_mse(slice(horizon - quarter, horizon)),
            wall_clock_seconds=0.0,
            backend=BACKEND_NAME,
        )
    summary.wall_clock_seconds = clock.elapsed

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t in range(n_traj):
            record = trajectory_record(
                t, x, xh_prior, xh_post, ys, us, s_ts, s_rs, trace_p, div_step
            )
            record.write_csv(out / f"trajectory_{t:03d}.csv")
        summary.write_json(out / "summary.json")
    return summary


def trajectory_record(t, x, xh_prior, xh_post, ys, us, s_ts, s_rs, trace_p,
                      div_step) -> TrajectoryRecord:
    """Slice one trial out of the batch arrays, truncating at divergence."""
    end = div_step[t] if div_step[t] > 0 else x.shape[1]
    return TrajectoryRecord(
        x=x[t, :end].copy(),
        xhat_prior=xh_prior[t, :end].copy(),
        xhat_post=xh_post[t, :end].copy(),
        y=ys[t, :end].copy(),
        u=us[t, :end].copy() if us is not None else None,
        s_t=s_ts[t, :end].copy(),
        s_r=s_rs[t, :end].copy(),
        trace_p_post=trace_p[t, :end].copy(),
        diverged_at=int(div_step[t]) if div_step[t] > 0 else None,
    )
