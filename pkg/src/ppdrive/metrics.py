"""Run-level metrics computed from a trace.

All angles are mechanical degrees, reduced modulo the inductance period.
A conduction interval is the span between two consecutive commutations; the
run start counts as the opening commutation since the rotor starts just past a
turn-on angle. The span after the last commutation is incomplete and is not
scored for detection.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .sim import Trace


class EmptyTrace(ValueError):
    pass


@dataclass
class Metrics:
    band_containment: float
    reconstruction_max_err: float
    detection_angle_err: list[float]
    # per-interval error bound: angle covered by two magnetizing cycles
    detection_tolerance: list[float]
    mean_detection_err: float
    detection_missed: int
    no_detections: bool
    mean_speed: float
    # worst (max - min) / mean of omega within one interval
    speed_ripple: float
    commutation_angles: list[float]
    n_intervals: int
    shoot_through: int
    multi_excitation: int
    lower_without_upper: int
    bit_flips: int = 0
    invalid_codes: int = 0
    slopes_skipped: int = 0
    n_steps: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "Metrics":
        nan = math.nan
        return cls(nan, nan, [], [], nan, 0, True, nan, nan, [], 0, 0, 0, 0)

    @property
    def violations(self) -> int:
        return self.shoot_through + self.multi_excitation + self.lower_without_upper

    @property
    def detections_within_tolerance(self) -> bool:
        return all(e <= tol for e, tol in zip(self.detection_angle_err, self.detection_tolerance))

    def row(self) -> dict[str, object]:
        """Flat record for CSV; lists become ``;``-separated strings."""
        out: dict[str, object] = {}
        for f in fields(self):
            if f.name == "extra":
                continue
            v = getattr(self, f.name)
            out[f.name] = ";".join(repr(float(x)) for x in v) if isinstance(v, list) else v
        out.update(self.extra)
        return out

    def to_csv(self, path: str | Path) -> None:
        row = self.row()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row))
            w.writeheader()
            w.writerow(row)


def wrap_angle(x, period: float = 90.0):
    """Signed angle difference reduced to [-period/2, period/2)."""
    return (np.asarray(x) + period / 2) % period - period / 2


def intervals(trace: Trace) -> list[tuple[int, int]]:
    """Complete conduction intervals as half-open row ranges ``[a, b)``.

    Row ``b - 1`` carries the commutation that closes the interval.
    """
    com = np.flatnonzero(trace["commutation"])
    starts = np.concatenate(([0], com[:-1] + 1)) if len(com) else np.zeros(0, int)
    return [(int(a), int(b) + 1) for a, b in zip(starts, com)]


def band_containment(trace: Trace, lo: float, hi: float) -> float:
    """Fraction of conduction rows with the active phase's true current in ``[lo, hi]``.

    Inside each interval, rows before the active phase first reaches ``lo``
    (the ramp up from zero after a commutation) are not counted.
    """
    if len(trace) == 0:
        return math.nan
    act = trace["active_phase"].astype(np.int64)
    i = np.stack([trace["i_A"], trace["i_B"], trace["i_C"]], axis=1)
    cur = i[np.arange(len(act)), act]
    # segment id changes on the row after each commutation
    seg = np.concatenate(([0], np.cumsum(trace["commutation"][:-1].astype(np.int64))))
    reached = cur >= lo
    first = np.full(seg[-1] + 1, len(cur))
    idx = np.flatnonzero(reached)
    np.minimum.at(first, seg[idx], idx)
    counted = np.arange(len(cur)) >= first[seg]
    if not counted.any():
        return math.nan
    inside = (cur >= lo) & (cur <= hi)
    return float(inside[counted].mean())


def reconstruction_max_err(trace: Trace) -> float:
    errs = []
    for ph in "ABC":
        v = trace[f"valid_{ph}"].astype(bool)
        if v.any():
            errs.append(np.max(np.abs(trace[f"est_i{ph}"][v] - trace[f"i_{ph}"][v])))
    return float(max(errs)) if errs else math.nan


def trace_violations(trace: Trace) -> dict[str, int]:
    """Switch-invariant violations recomputed from the recorded gate columns."""
    upper = np.stack([trace[f"upper_{p}"] for p in "ABC"]).astype(bool)
    lower = np.stack([trace[f"lower_{p}"] for p in "ABC"]).astype(bool)
    return {
        "shoot_through": int(np.count_nonzero(trace["s1"].astype(bool) & trace["s2"].astype(bool))),
        "multi_excitation": int(np.count_nonzero(upper.sum(axis=0) > 1)),
        "lower_without_upper": int(np.count_nonzero((lower & ~upper).any(axis=0))),
    }


def compute_metrics(trace: Trace) -> Metrics:
    n = len(trace)
    if n == 0:
        raise EmptyTrace("trace has no rows")
    period = trace.period_deg
    lo = trace.i_ref - trace.delta_i - trace.tol
    hi = trace.i_ref + trace.delta_i + trace.tol
    theta = trace["theta_deg"]
    omega = trace["omega"]
    det_rows = np.flatnonzero(trace["detect_phase"] >= 0)
    slope_rows = np.flatnonzero(~np.isnan(trace["slope"]))

    errs, tols, ripple = [], [], 0.0
    missed = 0
    spans = intervals(trace)
    for a, b in spans:
        phase = int(trace["active_phase"][a])
        w = omega[a:b]
        if w.mean() > 0:
            ripple = max(ripple, float((w.max() - w.min()) / w.mean()))
        d = det_rows[(det_rows >= a) & (det_rows < b)]
        if len(d) == 0:
            missed += 1
            continue
        k = int(d[0])
        errs.append(abs(float(wrap_angle(theta[k] - trace.aligned_deg[phase], period))))
        s = slope_rows[(slope_rows >= a) & (slope_rows < b)]
        th_n = np.unwrap(trace["slope_theta_deg"][s], period=period)
        tols.append(2.0 * float(np.median(np.diff(th_n))) if len(th_n) > 1 else math.nan)

    viol = trace_violations(trace)
    c = trace.counters
    return Metrics(
        band_containment=band_containment(trace, lo, hi),
        reconstruction_max_err=reconstruction_max_err(trace),
        detection_angle_err=errs,
        detection_tolerance=tols,
        mean_detection_err=float(np.mean(errs)) if errs else math.nan,
        detection_missed=missed,
        no_detections=len(det_rows) == 0,
        mean_speed=float(omega.mean()),
        speed_ripple=ripple if spans else math.nan,
        commutation_angles=[float(x) for x in trace["theta_mod90_deg"][trace["commutation"] == 1]],
        n_intervals=len(spans),
        shoot_through=max(viol["shoot_through"], c.get("shoot_through", 0)),
        multi_excitation=max(viol["multi_excitation"], c.get("multi_excitation", 0)),
        lower_without_upper=max(viol["lower_without_upper"], c.get("lower_without_upper", 0)),
        bit_flips=c.get("bit_flips", 0),
        invalid_codes=c.get("invalid_codes", 0),
        slopes_skipped=c.get("slopes_skipped", 0),
        n_steps=n,
    )

