"""Command-line interface.

Subcommands:

    estimate  <scenario.json>   open-loop estimation run
    control   <scenario.json>   closed-loop run
    stability <scenario.json>   mean-stability (and, when p = 1,
                                peak-covariance) reports
    reproduce <preset>          canned experiment with pinned constants

Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .channel import ChannelSchedule, probabilities
from .errors import NumericError, SolverError, ValidationError
from .presets import PRESET_IDS, reproduce
from .scenario import load_scenario
from .simulate import resolve_controller, run
from .stability import d_coefficients, indices, mean_stability, peak_cov_condition

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    parser.add_argument("--trials", type=int, default=None,
                        help="override the scenario trial count")
    parser.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory (default: ./out)")
    parser.add_argument("--trajectories", type=int, default=None,
                        help="number of per-trial CSVs to write")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (results are identical for any count)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twoswitch",
        description="Estimation, control, and stability analysis over two-switch links.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="run an open-loop estimation scenario")
    p_est.add_argument("scenario", type=Path)
    _add_common(p_est)

    p_ctl = sub.add_parser("control", help="run a closed-loop scenario")
    p_ctl.add_argument("scenario", type=Path)
    _add_common(p_ctl)

    p_sta = sub.add_parser("stability", help="evaluate stability conditions for a scenario")
    p_sta.add_argument("scenario", type=Path)
    p_sta.add_argument("--method", choices=("exact", "mc"), default=None,
                       help="gain-expectation method (default: exact when tractable)")
    p_sta.add_argument("--horizon", type=int, default=50,
                       help="gain window length for the estimation condition")
    p_sta.add_argument("--budget", type=int, default=100_000,
                       help="sampled histories for the mc method")
    p_sta.add_argument("--seed", type=int, default=0)
    p_sta.add_argument("--out", type=Path, default=Path("out"))

    p_rep = sub.add_parser("reproduce", help="run a canned experiment")
    p_rep.add_argument("preset", choices=PRESET_IDS)
    _add_common(p_rep)
    return parser


def _override_scenario(scenario, args):
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    if changes:
        from dataclasses import replace

        scenario = replace(scenario, **changes)
    return scenario


def _cmd_run(args, expected_kind: str) -> int:
    scenario = _override_scenario(load_scenario(args.scenario), args)
    if scenario.kind != expected_kind:
        raise ValidationError(
            f"scenario kind is {scenario.kind!r}; this subcommand runs {expected_kind!r}"
        )
    summary = run(scenario, out_dir=args.out, threads=args.threads,
                  trajectories=args.trajectories)
    print(f"{scenario.kind} run: {summary.trials} trials x {summary.horizon} steps "
          f"[{summary.backend} backend, {summary.wall_clock_seconds:.2f}s]")
    print(f"  divergence rate: {summary.divergence_rate:.3f}")
    mse = ", ".join(f"{v:.4g}" for v in summary.mse_final_quarter)
    print(f"  final-quarter output MSE: {mse}")
    print(f"  outputs written to {args.out}")
    return EXIT_OK


def _cmd_stability(args) -> int:
    scenario = load_scenario(args.scenario)
    if scenario.kind != "closed-loop":
        raise ValidationError("stability analysis needs a closed-loop scenario")
    controller = resolve_controller(scenario)
    channel = scenario.channel
    if isinstance(channel, ChannelSchedule):
        channel = channel.channels[channel.selection[0] - 1]
    pr = probabilities(channel)
    method = {"mc": "monte-carlo", "exact": "exact", None: "auto"}[args.method]
    report = mean_stability(scenario.model, controller, pr,
                            horizon=args.horizon, method=method,
                            budget=args.budget, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "mean_stability.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"mean stability: rho_control={report.rho_control:.6f} "
          f"max rho_estimation={max(report.rho_estimation):.6f} "
          f"verdict={'stable' if report.verdict else 'not shown stable'}")

    if pr.p == 1.0:
        idx = indices(scenario.model.A, scenario.model.B, scenario.model.C)
        d = d_coefficients(scenario.model.A, count=max(idx.combined - 1, 1))
        peak = peak_cov_condition(scenario.model.A, q=pr.q, d=d,
                                  I=idx.combined, i0=idx.i0, i1=idx.i1)
        with open(out / "peak_cov_report.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(peak.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"peak covariance: lhs={peak.lhs:.4f} cond1={peak.cond1} cond2={peak.cond2}")
    else:
        print("peak covariance: skipped (needs p = 1)")
    print(f"reports written to {out}")
    return EXIT_OK


def _cmd_reproduce(args) -> int:
    headline = reproduce(args.preset, out_dir=args.out, threads=args.threads,
                         trials=args.trials, seed=args.seed)
    print(f"preset {args.preset} done; artifacts in {args.out}")
    for key, value in headline.items():
        if isinstance(value, float):
            print(f"  {key}: {value:.6g}")
        elif not isinstance(value, (list, dict)):
            print(f"  {key}: {value}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "estimate":
            return _cmd_run(args, "open-loop")
        if args.command == "control":
            return _cmd_run(args, "closed-loop")
        if args.command == "stability":
            return _cmd_stability(args)
        if args.command == "reproduce":
            return _cmd_reproduce(args)
        raise ValidationError(f"unknown command {args.command!r}")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, NumericError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
