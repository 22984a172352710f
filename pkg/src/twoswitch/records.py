"""Per-step trajectory logs and run summaries emitted by the simulators."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np


def _fmt(value: float) -> str:
    # Shortest round-trip decimal; fixed choice keeps CSV output byte-stable.
    return format(float(value), ".17g")


@dataclass
class TrajectoryRecord:
    """Step-indexed log of one simulated trajectory.

    Arrays are truncated at the divergence step when the divergence guard
    fires; ``diverged_at`` is the 1-based step of the last recorded row in
    that case and None otherwise.
    """

    x: np.ndarray            # (steps, n) true state
    xhat_prior: np.ndarray   # (steps, n)
    xhat_post: np.ndarray    # (steps, n)
    y: np.ndarray            # (steps, l) received signal (zeros while s_r = 0)
    u: np.ndarray | None     # (steps, m) applied control, None for open loop
    s_t: np.ndarray          # (steps,) uint8
    s_r: np.ndarray          # (steps,) uint8
    trace_p_post: np.ndarray # (steps,)
    diverged_at: int | None = None

    @property
    def steps(self) -> int:
        return self.x.shape[0]

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def header(self) -> list[str]:
        n = self.x.shape[1]
        l = self.y.shape[1]
        cols = ["k"]
        cols += [f"x_{i + 1}" for i in range(n)]
        cols += [f"xhatpost_{i + 1}" for i in range(n)]
        if self.u is not None:
            cols += [f"u_{i + 1}" for i in range(self.u.shape[1])]
        cols += [f"y_{i + 1}" for i in range(l)]
        cols += ["s_t", "s_r", "tracePpost", "diverged"]
        return cols

    def rows(self):
        for k in range(self.steps):
            row = [str(k + 1)]
            row += [_fmt(v) for v in self.x[k]]
            row += [_fmt(v) for v in self.xhat_post[k]]
            if self.u is not None:
                row += [_fmt(v) for v in self.u[k]]
            row += [_fmt(v) for v in self.y[k]]
            diverged = int(self.diverged_at is not None and k + 1 == self.diverged_at)
            row += [str(int(self.s_t[k])), str(int(self.s_r[k])),
                    _fmt(self.trace_p_post[k]), str(diverged)]
            yield row

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(self.header()) + "\n")
            for row in self.rows():
                fh.write(",".join(row) + "\n")


@dataclass
class RunSummary:
    """Aggregate statistics of a Monte Carlo run."""

    trials: int
    horizon: int
    seed: int
    divergence_rate: float
    # Trace of the empirical error covariance per step, averaged over the
    # trials still alive at that step (NaN once every trial has diverged).
    empirical_error_trace: list[float]
    # Mean squared output estimation error per output channel, averaged
    # over the first and last quarters of the horizon.
    mse_first_quarter: list[float]
    mse_final_quarter: list[float]
    wall_clock_seconds: float
    backend: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        payload = {
            "trials": self.trials,
            "horizon": self.horizon,
            "seed": self.seed,
            "divergence_rate": self.divergence_rate,
            "empirical_error_trace": self.empirical_error_trace,
            "mse_first_quarter": self.mse_first_quarter,
            "mse_final_quarter": self.mse_final_quarter,
            "wall_clock_seconds": self.wall_clock_seconds,
            "backend": self.backend,
        }
        payload.update(self.extra)
        return payload

    def write_json(self, path) -> None:
        payload = self.to_dict()
        # wall clock varies run to run; keep it out of the artifact so
        # identical seeds produce identical bytes
        del payload["wall_clock_seconds"]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


class Stopwatch:
    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self._t0
        return False
