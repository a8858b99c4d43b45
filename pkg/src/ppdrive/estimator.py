"""Sensorless state estimation on the vehicle side.

Current reconstruction uses only the line sensor and the controller's own
knowledge of which phase the current packet addresses. From the reconstructed
current of each magnetizing payload a slope m_n is fitted; since
``L(theta_n) * m_n`` is roughly constant within a conduction interval, the slope
stops falling and starts rising once the inductance has passed its maximum,
which is the turn-off angle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .plant import SensorReading
from .protocol import PhaseId

SLOPE_METHODS = ("lsq", "point")


class TooFewSamples(ValueError):
    """A magnetizing payload was too short to fit a slope."""


class ReconstructionSample(NamedTuple):
    t: float
    est: tuple[float, float, float]
    valid: tuple[bool, bool, bool]

    def active(self) -> int | None:
        for k in range(3):
            if self.valid[k]:
                return k
        return None


_ZERO = (0.0, 0.0, 0.0)
_NONE_VALID = (False, False, False)
_ONE_VALID = ((True, False, False), (False, True, False), (False, False, True))


def reconstruct(reading: SensorReading, active_phase: PhaseId, in_payload: bool,
                t: float = 0.0) -> ReconstructionSample:
    """Attribute the line current to the phase addressed by the current packet.

    Every other phase is estimated at zero. Outside payloads (tags) and
    whenever the sensor cannot see a winding, nothing is valid.
    """
    if not (in_payload and reading.valid):
        return ReconstructionSample(t, _ZERO, _NONE_VALID)
    k = int(active_phase)
    i = reading.i_line
    est = (i, 0.0, 0.0) if k == 0 else (0.0, i, 0.0) if k == 1 else (0.0, 0.0, i)
    return ReconstructionSample(t, est, _ONE_VALID[k])


def slope_of_cycle(t: Sequence[float], i: Sequence[float], trim: float = 0.8,
                   method: str = "lsq", i_ref: float | None = None) -> float:
    """Current slope (A/s) of one magnetizing payload.

    ``lsq`` fits a line through the middle ``trim`` fraction of the samples,
    dropping switching transients at both ends. ``point`` takes a central
    difference where the current crosses ``i_ref``.
    """
    n = len(t)
    if n < 4:
        raise TooFewSamples(f"{n} samples")
    t = np.asarray(t, dtype=float)
    i = np.asarray(i, dtype=float)
    if method == "lsq":
        cut = int(round(0.5 * (1.0 - trim) * n))
        ts, is_ = t[cut:n - cut], i[cut:n - cut]
        if len(ts) < 2:
            raise TooFewSamples(f"{len(ts)} samples after trimming")
        tc = ts - ts.mean()
        return float(np.dot(tc, is_ - is_.mean()) / np.dot(tc, tc))
    if method == "point":
        if i_ref is None:
            raise ValueError("point slope needs i_ref")
        above = i >= i_ref
        j = int(np.argmax(above)) if above.any() else n // 2
        j = min(max(j, 1), n - 2)
        return float((i[j + 1] - i[j - 1]) / (t[j + 1] - t[j - 1]))
    raise ValueError(f"slope method must be one of {SLOPE_METHODS}")


@dataclass(frozen=True)
class DetectorConfig:
    guard_cycles: int = 3
    confirm_count: int = 1
    rel_epsilon: float = 0.02

    def __post_init__(self):
        if self.guard_cycles < 1 or self.confirm_count < 1 or self.rel_epsilon < 0:
            raise ValueError("need guard_cycles >= 1, confirm_count >= 1, rel_epsilon >= 0")


def detect_turnoff(slopes: Sequence[float], cfg: DetectorConfig = DetectorConfig()) -> int | None:
    """Index n of the first slope (n >= guard) followed by ``confirm_count`` rises.

    A rise is ``m[k+1] > m[k] * (1 + rel_epsilon)``. The event belongs to the end
    of cycle ``n + confirm_count``. Returns None when no such n exists.
    """
    c = cfg.confirm_count
    grow = 1.0 + cfg.rel_epsilon
    for n in range(cfg.guard_cycles, len(slopes) - c):
        if all(slopes[k + 1] > slopes[k] * grow for k in range(n, n + c)):
            return n
    return None


@dataclass
class SlopeEntry:
    n: int
    slope: float
    t_n: float
    step_n: int
    # ground truth, filled in by the harness for evaluation only
    theta_n: float | None = None


@dataclass(frozen=True)
class Detection:
    t: float
    n: int
    cycle: int


@dataclass
class TurnoffEstimator:
    """Per-conduction-interval slope history and turn-off detector.

    Fed one reconstructed sample of the active phase per step; never sees the
    rotor angle.
    """

    i_ref: float
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    method: str = "lsq"
    trim: float = 0.8
    entries: list[SlopeEntry] = field(default_factory=list)
    detection: Detection | None = None
    skipped: int = 0

    def __post_init__(self):
        if self.method not in SLOPE_METHODS:
            raise ValueError(f"slope method must be one of {SLOPE_METHODS}")
        self._t: list[float] = []
        self._i: list[float] = []
        self._step0 = 0

    def reset(self) -> None:
        self.entries = []
        self.detection = None
        self._t, self._i = [], []

    @property
    def slopes(self) -> list[float]:
        return [e.slope for e in self.entries]

    def update(self, t: float, i: float, valid: bool, magnetizing: bool,
               step: int) -> tuple[SlopeEntry | None, Detection | None]:
        """Consume one step. ``magnetizing`` is true inside a magnetizing payload."""
        if magnetizing:
            if valid:
                if not self._t:
                    self._step0 = step
                self._t.append(t)
                self._i.append(i)
            return None, None
        if not self._t:
            return None, None
        return self._close()

    def _close(self) -> tuple[SlopeEntry | None, Detection | None]:
        t, i = self._t, self._i
        self._t, self._i = [], []
        try:
            m = slope_of_cycle(t, i, self.trim, self.method, self.i_ref)
        except TooFewSamples:
            self.skipped += 1
            return None, None
        j = next((k for k, x in enumerate(i) if x >= self.i_ref), len(i) // 2)
        entry = SlopeEntry(len(self.entries), m, t[j], self._step0 + j)
        self.entries.append(entry)
        det = None
        if self.detection is None:
            n = detect_turnoff(self.slopes, self.detector)
            if n is not None:
                det = self.detection = Detection(t[-1], n, entry.n)
        return entry, det
