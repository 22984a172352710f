import json

import numpy as np
import pytest

from twoswitch.cli import main
from twoswitch.scenario import SCHEMA


def write_scenario(tmp_path, payload, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def open_loop_payload(horizon=32, trials=3):
    return {
        "schema": SCHEMA,
        "kind": "open-loop",
        "model": {
            "A": [[0.9]], "C": [[1.0]], "V": [[0.2]], "W": [[0.5]],
            "x1": [1.0], "P1": [[1.0]],
        },
        "channel": {"h": 1, "m": 1, "o": 1, "inactivity": [0.8, 0.8, 0.8]},
        "horizon": horizon,
        "trials": trials,
        "seed": 5,
    }


def closed_loop_payload():
    payload = open_loop_payload()
    payload["kind"] = "closed-loop"
    payload["model"]["A"] = [[1.05]]
    payload["model"]["B"] = [[1.0]]
    payload["controller"] = {"type": "fixed", "F": [[0.6]]}
    payload["reference"] = {"type": "step", "amplitude": 1.0, "onset": 0}
    return payload


class TestEstimate:
    def test_runs_and_writes(self, tmp_path, capsys):
        path = write_scenario(tmp_path, open_loop_payload())
        code = main(["estimate", str(path), "--out", str(tmp_path / "out")])
        assert code == 0
        assert (tmp_path / "out" / "summary.json").exists()
        assert (tmp_path / "out" / "trajectory_000.csv").exists()
        assert "divergence rate" in capsys.readouterr().out

    def test_kind_mismatch_exit_2(self, tmp_path, capsys):
        path = write_scenario(tmp_path, closed_loop_payload())
        assert main(["estimate", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_invalid_scenario_exit_2(self, tmp_path, capsys):
        payload = open_loop_payload()
        payload["channel"]["inactivity"] = [2.0, 0.5, 0.5]
        path = write_scenario(tmp_path, payload)
        code = main(["estimate", str(path), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "inactivity" in capsys.readouterr().err

    def test_missing_file_exit_2(self, tmp_path):
        assert main(["estimate", str(tmp_path / "none.json")]) == 2

    def test_seed_and_trial_override(self, tmp_path):
        path = write_scenario(tmp_path, open_loop_payload())
        main(["estimate", str(path), "--out", str(tmp_path / "a"),
              "--seed", "9", "--trials", "2"])
        summary = json.loads((tmp_path / "a" / "summary.json").read_text())
        assert summary["seed"] == 9
        assert summary["trials"] == 2


class TestControl:
    def test_runs(self, tmp_path):
        path = write_scenario(tmp_path, closed_loop_payload())
        code = main(["control", str(path), "--out", str(tmp_path / "out"),
                     "--threads", "2", "--trajectories", "2"])
        assert code == 0
        assert (tmp_path / "out" / "trajectory_001.csv").exists()

    def test_numeric_failure_exit_3(self, tmp_path, capsys):
        payload = closed_loop_payload()
        # uncontrollable unstable plant: LQR synthesis cannot converge
        payload["model"]["B"] = [[0.0]]
        payload["model"]["Q"] = [[1.0]]
        payload["model"]["R"] = [[1.0]]
        payload["controller"] = {"type": "lqr"}
        path = write_scenario(tmp_path, payload)
        code = main(["control", str(path), "--out", str(tmp_path / "o")])
        assert code == 3
        assert "numeric" in capsys.readouterr().err


class TestStability:
    def test_report_written(self, tmp_path, capsys):
        path = write_scenario(tmp_path, closed_loop_payload())
        code = main(["stability", str(path), "--method", "mc",
                     "--budget", "500", "--horizon", "10",
                     "--out", str(tmp_path / "stab")])
        assert code == 0
        report = json.loads((tmp_path / "stab" / "mean_stability.json").read_text())
        assert set(report) >= {"rho_control", "rho_estimation", "verdict"}
        assert len(report["rho_estimation"]) == 10

    def test_peak_cov_emitted_when_p_one(self, tmp_path):
        payload = closed_loop_payload()
        payload["channel"] = {"h": 0, "m": 2, "o": 1,
                              "inactivity": [0.7, 0.8, 0.9]}
        path = write_scenario(tmp_path, payload)
        code = main(["stability", str(path), "--method", "exact",
                     "--horizon", "8", "--out", str(tmp_path / "stab")])
        assert code == 0
        assert (tmp_path / "stab" / "peak_cov_report.json").exists()


class TestReproduce:
    def test_unknown_preset_rejected(self):
        with pytest.raises(SystemExit) as err:
            main(["reproduce", "no-such-preset"])
        assert err.value.code == 2  # argparse choice validation

    def test_small_pendulum_preset(self, tmp_path, capsys):
        code = main(["reproduce", "pendulum-estimation",
                     "--out", str(tmp_path / "rep"),
                     "--trials", "3", "--threads", "2"])
        assert code == 0
        out = tmp_path / "rep"
        assert (out / "scenario.json").exists()
        assert (out / "headline.json").exists()
        assert (out / "summary.json").exists()
        headline = json.loads((out / "headline.json").read_text())
        assert headline["trials"] == 3
        assert "wall_clock_seconds" not in headline
