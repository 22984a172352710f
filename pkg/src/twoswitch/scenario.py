"""Scenario files: a versioned JSON description of one experiment.

A scenario pins everything a run needs: the plant and noise matrices, the
primary-user topology (or a multi-channel schedule), the controller and
reference, the horizon, the trial count, and the master seed. Matrices are
nested row arrays; the schema is versioned through the top-level
``schema`` field.

Example (closed loop, fixed gain):

    {
      "schema": "twoswitch-scenario/1",
      "kind": "closed-loop",
      "model": {"A": [[...]], "B": [[...]], "C": [[...]],
                "V": [[...]], "W": [[...]],
                "x1": [...], "P1": [[...]]},
      "channel": {"h": 1, "m": 1, "o": 1, "inactivity": [0.8, 0.8, 0.8]},
      "controller": {"type": "fixed", "F": [[...]]},
      "reference": {"type": "step", "amplitude": 1.0, "onset": 0},
      "horizon": 3000, "trials": 100, "seed": 20260808
    }

``assumed_channel`` optionally separates the statistics the estimator and
controller were designed for from the channel the simulation actually
samples, which models a deployed stack facing a drifted PU environment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelSchedule, PuTopology
from .closed_loop import ClosedLoopModel
from .errors import ValidationError
from .estimator import SystemModel

SCHEMA = "twoswitch-scenario/1"

CONTROLLER_TYPES = ("none", "fixed", "lqr", "scaled-lqr")
REFERENCE_TYPES = ("none", "step")


@dataclass(frozen=True)
class ControllerSpec:
    type: str = "none"
    F: np.ndarray | None = None

    def __post_init__(self):
        if self.type not in CONTROLLER_TYPES:
            raise ValidationError(
                f"controller.type must be one of {CONTROLLER_TYPES}, got {self.type!r}"
            )
        if self.type == "fixed" and self.F is None:
            raise ValidationError("controller.F is required when controller.type is 'fixed'")
        if self.F is not None:
            object.__setattr__(self, "F", np.asarray(self.F, dtype=float))


@dataclass(frozen=True)
class ReferenceSpec:
    type: str = "none"
    amplitude: float = 1.0
    onset: int = 0
    output_row: int = 0

    def __post_init__(self):
        if self.type not in REFERENCE_TYPES:
            raise ValidationError(
                f"reference.type must be one of {REFERENCE_TYPES}, got {self.type!r}"
            )
        if self.onset < 0:
            raise ValidationError("reference.onset must be nonnegative")

    def sequence(self, horizon: int) -> np.ndarray:
        r = np.zeros(horizon)
        if self.type == "step":
            r[self.onset:] = self.amplitude
        return r


@dataclass(frozen=True)
class Scenario:
    kind: str
    model: SystemModel | ClosedLoopModel
    channel: PuTopology | ChannelSchedule
    horizon: int
    trials: int
    seed: int
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    assumed_channel: PuTopology | ChannelSchedule | None = None
    trajectories: int = 1

    def __post_init__(self):
        if self.kind not in ("open-loop", "closed-loop"):
            raise ValidationError(f"kind must be 'open-loop' or 'closed-loop', got {self.kind!r}")
        if self.horizon < 1:
            raise ValidationError("horizon must be at least 1")
        if self.trials < 1:
            raise ValidationError("trials must be at least 1")
        if not (0 <= self.trajectories <= self.trials):
            raise ValidationError("emit.trajectories must lie in [0, trials]")
        if self.kind == "open-loop" and not isinstance(self.model, SystemModel):
            raise ValidationError("open-loop scenarios need an open-loop model")
        if self.kind == "closed-loop" and not isinstance(self.model, ClosedLoopModel):
            raise ValidationError("closed-loop scenarios need a closed-loop model (with B)")
        if self.kind == "open-loop" and self.controller.type != "none":
            raise ValidationError("controller must be 'none' for open-loop scenarios")
        if self.kind == "closed-loop" and self.controller.type == "none":
            raise ValidationError("closed-loop scenarios need a controller")
        if self.controller.type in ("lqr", "scaled-lqr"):
            if self.model.Q is None or self.model.R is None:
                raise ValidationError(
                    f"model.Q and model.R are required for controller.type {self.controller.type!r}"
                )
        for name, channel in (("channel", self.channel),
                              ("assumed_channel", self.assumed_channel)):
            if isinstance(channel, ChannelSchedule) and len(channel.selection) < self.horizon:
                raise ValidationError(
                    f"{name}.selection covers {len(channel.selection)} steps "
                    f"but horizon is {self.horizon}"
                )
        if self.reference.type != "none":
            if not (0 <= self.reference.output_row < self.model.n_outputs):
                raise ValidationError(
                    f"reference.output_row {self.reference.output_row} out of range "
                    f"for {self.model.n_outputs} outputs"
                )

    def to_dict(self) -> dict:
        def mat(M):
            return np.asarray(M).tolist()

        model: dict = {
            "A": mat(self.model.A), "C": mat(self.model.C),
            "V": mat(self.model.V), "W": mat(self.model.W),
            "x1": mat(self.model.x1), "P1": mat(self.model.P1),
        }
        if self.model.xhat1 is not None:
            model["xhat1"] = mat(self.model.xhat1)
        if isinstance(self.model, ClosedLoopModel):
            model["B"] = mat(self.model.B)
            for name in ("Q", "R", "QN"):
                value = getattr(self.model, name)
                if value is not None:
                    model[name] = mat(value)

        payload = {
            "schema": SCHEMA,
            "kind": self.kind,
            "model": model,
            "channel": _channel_to_dict(self.channel),
            "horizon": self.horizon,
            "trials": self.trials,
            "seed": self.seed,
            "emit": {"trajectories": self.trajectories},
        }
        if self.assumed_channel is not None:
            payload["assumed_channel"] = _channel_to_dict(self.assumed_channel)
        ctrl: dict = {"type": self.controller.type}
        if self.controller.F is not None:
            ctrl["F"] = mat(self.controller.F)
        payload["controller"] = ctrl
        payload["reference"] = {
            "type": self.reference.type,
            "amplitude": self.reference.amplitude,
            "onset": self.reference.onset,
            "output_row": self.reference.output_row,
        }
        return payload

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def _channel_to_dict(channel) -> dict:
    if isinstance(channel, PuTopology):
        return {"h": channel.h, "m": channel.m, "o": channel.o,
                "inactivity": list(channel.inactivity)}
    return {
        "channels": [_channel_to_dict(c) for c in channel.channels],
        "selection": list(channel.selection),
    }


def _require(payload: dict, key: str, where: str):
    if key not in payload:
        raise ValidationError(f"missing field {where}.{key}" if where else f"missing field {key}")
    return payload[key]


def _parse_matrix(payload, where: str) -> np.ndarray:
    try:
        M = np.asarray(payload, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where} is not a numeric array: {exc}") from exc
    if not np.all(np.isfinite(M)):
        raise ValidationError(f"{where} contains non-finite entries")
    return M


def _parse_channel(payload: dict, where: str):
    if not isinstance(payload, dict):
        raise ValidationError(f"{where} must be an object")
    if "channels" in payload:
        channels = tuple(
            _parse_channel(c, f"{where}.channels[{i}]")
            for i, c in enumerate(_require(payload, "channels", where))
        )
        selection = tuple(int(i) for i in _require(payload, "selection", where))
        try:
            return ChannelSchedule(channels=channels, selection=selection)
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from exc
    try:
        return PuTopology(
            h=int(_require(payload, "h", where)),
            m=int(_require(payload, "m", where)),
            o=int(_require(payload, "o", where)),
            inactivity=tuple(float(p) for p in _require(payload, "inactivity", where)),
        )
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def loads(payload: dict | str) -> Scenario:
    """Build a validated Scenario from a dict or JSON text."""
    if isinstance(payload, str):
        try:
            payload = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ValidationError("scenario root must be a JSON object")
    schema = _require(payload, "schema", "")
    if schema != SCHEMA:
        raise ValidationError(f"unsupported schema {schema!r}; expected {SCHEMA!r}")
    kind = _require(payload, "kind", "")

    raw_model = _require(payload, "model", "")
    common = {
        "A": _parse_matrix(_require(raw_model, "A", "model"), "model.A"),
        "C": _parse_matrix(_require(raw_model, "C", "model"), "model.C"),
        "V": _parse_matrix(_require(raw_model, "V", "model"), "model.V"),
        "W": _parse_matrix(_require(raw_model, "W", "model"), "model.W"),
        "x1": _parse_matrix(_require(raw_model, "x1", "model"), "model.x1"),
        "P1": _parse_matrix(_require(raw_model, "P1", "model"), "model.P1"),
        "xhat1": (_parse_matrix(raw_model["xhat1"], "model.xhat1")
                  if "xhat1" in raw_model else None),
    }
    try:
        if kind == "closed-loop":
            model = ClosedLoopModel(
                B=_parse_matrix(_require(raw_model, "B", "model"), "model.B"),
                Q=(_parse_matrix(raw_model["Q"], "model.Q") if "Q" in raw_model else None),
                R=(_parse_matrix(raw_model["R"], "model.R") if "R" in raw_model else None),
                QN=(_parse_matrix(raw_model["QN"], "model.QN") if "QN" in raw_model else None),
                **common,
            )
        else:
            model = SystemModel(**common)
    except (ValidationError, ValueError) as exc:
        raise ValidationError(f"model: {exc}") from exc

    channel = _parse_channel(_require(payload, "channel", ""), "channel")
    assumed = (_parse_channel(payload["assumed_channel"], "assumed_channel")
               if "assumed_channel" in payload else None)

    raw_ctrl = payload.get("controller", {"type": "none"})
    controller = ControllerSpec(
        type=raw_ctrl.get("type", "none"),
        F=(_parse_matrix(raw_ctrl["F"], "controller.F") if "F" in raw_ctrl else None),
    )
    raw_ref = payload.get("reference", {"type": "none"})
    reference = ReferenceSpec(
        type=raw_ref.get("type", "none"),
        amplitude=float(raw_ref.get("amplitude", 1.0)),
        onset=int(raw_ref.get("onset", 0)),
        output_row=int(raw_ref.get("output_row", 0)),
    )
    emit = payload.get("emit", {})

    return Scenario(
        kind=kind,
        model=model,
        channel=channel,
        assumed_channel=assumed,
        controller=controller,
        reference=reference,
        horizon=int(_require(payload, "horizon", "")),
        trials=int(_require(payload, "trials", "")),
        seed=int(_require(payload, "seed", "")),
        trajectories=int(emit.get("trajectories", 1)),
    )


def load_scenario(path) -> Scenario:
    """Load and validate a scenario JSON file."""
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"scenario file not found: {p}")
    return loads(p.read_text(encoding="utf-8"))
