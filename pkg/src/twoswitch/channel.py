"""Primary-user topology model and two-switch channel probabilities.

A secondary transmitter (ST) and receiver (SR) each sense a region of
primary users (PUs). PU ``i`` is inactive at a given step with probability
``p_i``, independently of the other PUs and of everything else. The ST may
transmit only when every PU it senses is inactive (``s_t = 1``) and the SR
may listen only when every PU it senses is inactive (``s_r = 1``). PUs in
the intersection of the two sensing regions correlate the switches.

The conditional probability ``p = P(s_t=1 | s_r=1)`` reduces to the product
of the inactivity probabilities of the PUs seen by the transmitter alone:
conditioning on ``s_r = 1`` already forces the shared PUs quiet. The
companion quantity ``p_d0 = P(s_t=1 | s_r=0)`` feeds the closed-loop
estimator, where the process noise reaches the plant through the transmit
switch even while the receiver is blocked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class PuTopology:
    """Primary-user layout around one channel.

    ``h`` PUs are sensed by the transmitter only, ``m`` by both sides, and
    ``o`` by the receiver only. ``inactivity`` lists the per-PU inactivity
    probabilities in that order (ST-only, intersection, SR-only).
    """

    h: int
    m: int
    o: int
    inactivity: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "inactivity", tuple(float(p) for p in self.inactivity))
        for name, count in (("h", self.h), ("m", self.m), ("o", self.o)):
            if not isinstance(count, int) or count < 0:
                raise ValidationError(f"topology.{name} must be a nonnegative integer")
        if len(self.inactivity) != self.h + self.m + self.o:
            raise ValidationError(
                "topology.inactivity must list h+m+o probabilities, "
                f"got {len(self.inactivity)} for h+m+o={self.h + self.m + self.o}"
            )
        for i, p in enumerate(self.inactivity):
            if not (0.0 <= p <= 1.0) or not math.isfinite(p):
                raise ValidationError(f"topology.inactivity[{i}] must lie in [0, 1], got {p}")

    @property
    def st_only(self) -> tuple[float, ...]:
        return self.inactivity[: self.h]

    @property
    def shared(self) -> tuple[float, ...]:
        return self.inactivity[self.h : self.h + self.m]

    @property
    def sr_only(self) -> tuple[float, ...]:
        return self.inactivity[self.h + self.m :]


@dataclass(frozen=True)
class ChannelProbabilities:
    """Switch statistics of one channel.

    gamma  P(s_t = 1)
    q      P(s_r = 1)
    p      P(s_t = 1 | s_r = 1)
    p_d0   P(s_t = 1 | s_r = 0), defined as 0 when q = 1
    """

    gamma: float
    q: float
    p: float
    p_d0: float

    def p_d(self, s_r: int) -> float:
        """Transmit availability conditioned on the current receiver switch."""
        return self.p if s_r else self.p_d0

    def joint_weights(self) -> tuple[float, float, float, float]:
        """P(s_t, s_r) over the four outcomes, ordered (1,1), (0,1), (1,0), (0,0)."""
        return (
            self.p * self.q,
            (1.0 - self.p) * self.q,
            self.p_d0 * (1.0 - self.q),
            (1.0 - self.p_d0) * (1.0 - self.q),
        )


@dataclass(frozen=True)
class SwitchSample:
    """One joint realization of the transmit and receive switches."""

    s_t: int
    s_r: int


@dataclass(frozen=True)
class ChannelSchedule:
    """Several channels plus the 1-based channel index sensed at each step."""

    channels: tuple[PuTopology, ...]
    selection: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "selection", tuple(int(i) for i in self.selection))
        if not self.channels:
            raise ValidationError("schedule.channels must not be empty")
        for k, i in enumerate(self.selection):
            if not (1 <= i <= len(self.channels)):
                raise ValidationError(
                    f"schedule.selection[{k}] = {i} does not index a channel "
                    f"(valid range 1..{len(self.channels)})"
                )


def _product(probs) -> float:
    out = 1.0
    for p in probs:
        out *= p
    return out


def probabilities(topology: PuTopology) -> ChannelProbabilities:
    """All conditional channel probabilities implied by a PU topology.

    With inactivity probabilities ``p_1 .. p_{h+m+o}``:

        gamma = prod_{i=1..h+m} p_i
        q     = prod_{i=h+1..h+m+o} p_i
        p     = prod_{i=1..h} p_i
        p_d0  = gamma * (1 - prod_{i=h+m+1..h+m+o} p_i) / (1 - q)

    Empty products are 1, hence p = 1 when no PU is private to the
    transmitter. When q = 1 the event s_r = 0 has probability zero and
    p_d0 is fixed at 0 by convention.
    """
    gamma = _product(topology.st_only) * _product(topology.shared)
    q = _product(topology.shared) * _product(topology.sr_only)
    p = _product(topology.st_only)
    if q >= 1.0:
        p_d0 = 0.0
    else:
        p_d0 = gamma * (1.0 - _product(topology.sr_only)) / (1.0 - q)
    return ChannelProbabilities(gamma=gamma, q=q, p=p, p_d0=p_d0)


def shared_inactive_given_sr(topology: PuTopology) -> tuple[float, float]:
    """P(all intersection PUs inactive | s_r), returned as (given 0, given 1).

    Conditioning on s_r = 1 forces the intersection quiet. Given s_r = 0,
    the intersection is quiet exactly when the outage is caused by the
    receiver-only PUs.
    """
    p_shared = _product(topology.shared)
    p_sr_only = _product(topology.sr_only)
    q = p_shared * p_sr_only
    if q >= 1.0:
        return 0.0, 1.0
    given0 = p_shared * (1.0 - p_sr_only) / (1.0 - q)
    return given0, 1.0


def sample(topology: PuTopology, rng: np.random.Generator) -> SwitchSample:
    """Draw one joint switch sample from independent PU activities."""
    inactive = rng.random(len(topology.inactivity)) < np.asarray(topology.inactivity)
    s_t = bool(np.all(inactive[: topology.h + topology.m]))
    s_r = bool(np.all(inactive[topology.h :]))
    return SwitchSample(s_t=int(s_t), s_r=int(s_r))


def sample_batch(
    topology: PuTopology, rng: np.random.Generator, size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized switch sampling; returns (s_t, s_r) uint8 arrays of length ``size``.

    Each step consumes exactly h+m+o uniform draws in PU order, so a batch
    of length T is bit-identical to T sequential calls to :func:`sample`.
    """
    n_pu = len(topology.inactivity)
    if n_pu == 0:
        ones = np.ones(size, dtype=np.uint8)
        return ones, ones.copy()
    u = rng.random((size, n_pu))
    inactive = u < np.asarray(topology.inactivity)[None, :]
    s_t = np.all(inactive[:, : topology.h + topology.m], axis=1).astype(np.uint8)
    s_r = np.all(inactive[:, topology.h :], axis=1).astype(np.uint8)
    return s_t, s_r


def step_probabilities(schedule: ChannelSchedule, k: int) -> ChannelProbabilities:
    """Probabilities of the channel sensed at step ``k`` (1-based)."""
    if not (1 <= k <= len(schedule.selection)):
        raise ValidationError(
            f"step index {k} outside schedule of length {len(schedule.selection)}"
        )
    return probabilities(schedule.channels[schedule.selection[k - 1] - 1])
