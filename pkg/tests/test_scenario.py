import json

import numpy as np
import pytest

from twoswitch.channel import ChannelSchedule, PuTopology
from twoswitch.errors import ValidationError
from twoswitch.scenario import SCHEMA, Scenario, load_scenario, loads


def minimal_open_loop() -> dict:
    return {
        "schema": SCHEMA,
        "kind": "open-loop",
        "model": {
            "A": [[1.0]], "C": [[1.0]], "V": [[0.1]], "W": [[1.0]],
            "x1": [0.0], "P1": [[1.0]],
        },
        "channel": {"h": 1, "m": 1, "o": 1, "inactivity": [0.8, 0.8, 0.8]},
        "horizon": 10,
        "trials": 2,
        "seed": 7,
    }


def closed_loop_payload() -> dict:
    payload = minimal_open_loop()
    payload["kind"] = "closed-loop"
    payload["model"]["B"] = [[1.0]]
    payload["controller"] = {"type": "fixed", "F": [[0.5]]}
    payload["reference"] = {"type": "step", "amplitude": 2.0, "onset": 3}
    return payload


class TestLoading:
    def test_minimal_scalar_loads(self):
        sc = loads(minimal_open_loop())
        assert sc.kind == "open-loop"
        assert sc.horizon == 10
        assert isinstance(sc.channel, PuTopology)

    def test_closed_loop_loads(self):
        sc = loads(closed_loop_payload())
        assert sc.controller.type == "fixed"
        assert sc.reference.sequence(6).tolist() == [0, 0, 0, 2.0, 2.0, 2.0]

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(closed_loop_payload()))
        sc = load_scenario(path)
        assert sc.seed == 7

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError, match="not found"):
            load_scenario(tmp_path / "nope.json")

    def test_bad_json(self):
        with pytest.raises(ValidationError, match="valid JSON"):
            loads("{not json")

    def test_wrong_schema(self):
        payload = minimal_open_loop()
        payload["schema"] = "other/9"
        with pytest.raises(ValidationError, match="schema"):
            loads(payload)


class TestValidationMessages:
    def test_bad_probability_names_field(self):
        payload = minimal_open_loop()
        payload["channel"]["inactivity"] = [0.8, 1.2, 0.8]
        with pytest.raises(ValidationError, match=r"channel.*inactivity\[1\]"):
            loads(payload)

    def test_missing_model_field(self):
        payload = minimal_open_loop()
        del payload["model"]["V"]
        with pytest.raises(ValidationError, match="model.V"):
            loads(payload)

    def test_indefinite_noise_named(self):
        payload = minimal_open_loop()
        payload["model"]["W"] = [[0.0]]
        with pytest.raises(ValidationError, match="model"):
            loads(payload)

    def test_controller_requires_gain(self):
        payload = closed_loop_payload()
        del payload["controller"]["F"]
        with pytest.raises(ValidationError, match="controller.F"):
            loads(payload)

    def test_lqr_requires_weights(self):
        payload = closed_loop_payload()
        payload["controller"] = {"type": "lqr"}
        with pytest.raises(ValidationError, match="model.Q"):
            loads(payload)

    def test_open_loop_rejects_controller(self):
        payload = minimal_open_loop()
        payload["controller"] = {"type": "fixed", "F": [[1.0]]}
        with pytest.raises(ValidationError, match="controller"):
            loads(payload)

    def test_schedule_shorter_than_horizon(self):
        payload = minimal_open_loop()
        payload["channel"] = {
            "channels": [payload["channel"]],
            "selection": [1, 1, 1],
        }
        with pytest.raises(ValidationError, match="selection"):
            loads(payload)

    def test_schedule_loads(self):
        payload = minimal_open_loop()
        payload["channel"] = {
            "channels": [payload["channel"]],
            "selection": [1] * 10,
        }
        sc = loads(payload)
        assert isinstance(sc.channel, ChannelSchedule)


class TestRoundTrip:
    def test_serialize_load_identity(self):
        sc = loads(closed_loop_payload())
        again = loads(sc.dumps())
        assert again.kind == sc.kind
        assert np.array_equal(again.model.A, sc.model.A)
        assert np.array_equal(again.controller.F, sc.controller.F)
        assert again.channel == sc.channel
        assert again.reference == sc.reference
        assert (again.horizon, again.trials, again.seed) == (
            sc.horizon, sc.trials, sc.seed)

    def test_assumed_channel_round_trip(self):
        payload = closed_loop_payload()
        payload["assumed_channel"] = {"h": 1, "m": 1, "o": 1,
                                      "inactivity": [0.5, 0.8, 0.8]}
        sc = loads(payload)
        again = loads(sc.dumps())
        assert again.assumed_channel == sc.assumed_channel
