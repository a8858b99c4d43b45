"""6/4 switched reluctance motor with an asymmetric half-bridge per phase.

Per phase, with current-independent inductance L(theta)::

    L di/dt = v - r i - i omega dL/dtheta

and the rotor obeys ``J domega/dt = T_e - B omega - T_load`` with
``T_e = sum(0.5 i^2 dL/dtheta)``. Everything is integrated with fixed-step RK4.
Diodes make the drive unipolar: a phase at zero current with a non-positive
applied voltage stays at zero.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from numba import njit

from .protocol import HIGH, ExcitationMode, PhaseId

TWO_PI = 2.0 * math.pi
RAD2DEG = 180.0 / math.pi

PROFILES = ("trapezoid", "raised_cosine")


class NonFinite(ArithmeticError):
    """Plant state left the finite range (dt too large for the parameters)."""


@dataclass(frozen=True)
class MotorParams:
    r: float = 8.0
    l_min: float = 10e-3
    l_max: float = 40e-3
    rotor_poles: int = 4
    phase_offset_deg: float = 30.0
    j: float = 1e-3
    b_visc: float = 2.6e-4
    t_load: float = 1e-3
    e: float = 24.0
    v_diode: float = 0.0
    v_switch: float = 0.0
    profile: str = "trapezoid"
    # phase A inductance peak (mechanical degrees)
    aligned_deg: float = 45.0
    # trapezoid segment widths; the flat L_min segment takes the rest of the period
    rise_deg: float = 25.0
    top_deg: float = 0.0
    fall_deg: float = 45.0

    def __post_init__(self):
        if not self.l_max > self.l_min > 0:
            raise ValueError("need l_max > l_min > 0")
        if self.r < 0 or self.j <= 0 or self.e <= 0:
            raise ValueError("need r >= 0, j > 0, e > 0")
        if self.rotor_poles < 1:
            raise ValueError("rotor_poles must be positive")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}")
        if self.profile == "trapezoid":
            if self.rise_deg <= 0 or self.fall_deg <= 0 or self.top_deg < 0:
                raise ValueError("trapezoid needs rise_deg, fall_deg > 0 and top_deg >= 0")
            if self.rise_deg + self.top_deg + self.fall_deg > self.period_deg + 1e-12:
                raise ValueError("trapezoid segments exceed one inductance period")

    @property
    def period_deg(self) -> float:
        return 360.0 / self.rotor_poles

    def aligned_angle_deg(self, phase: PhaseId) -> float:
        """Angle of maximum inductance for ``phase``, reduced to one period."""
        return (self.aligned_deg + int(phase) * self.phase_offset_deg) % self.period_deg


# packed profile parameters, see _pack()
_P_KIND, _P_LMIN, _P_LMAX, _P_PERIOD, _P_HT, _P_LO, _P_HI, _P_KR, _P_KF, _P_NR = range(10)
_P_C0 = 10  # three phase centres follow
_P_SIZE = 13


@njit(cache=True)
def _ev(theta, ph, prm):
    """(L, dL/dtheta) of phase ``ph`` at ``theta`` (rad)."""
    if prm[_P_KIND] == 0.0:
        period = prm[_P_PERIOD]
        half = 0.5 * period
        phi = (theta * RAD2DEG - prm[_P_C0 + ph] + half) % period - half
        ht = prm[_P_HT]
        lo = prm[_P_LO]
        if phi < lo or phi > prm[_P_HI]:
            return prm[_P_LMIN], 0.0
        if phi < -ht:
            return prm[_P_LMIN] + prm[_P_KR] * (phi - lo), prm[_P_KR] * RAD2DEG
        if phi <= ht:
            return prm[_P_LMAX], 0.0
        return prm[_P_LMAX] - prm[_P_KF] * (phi - ht), -prm[_P_KF] * RAD2DEG
    avg = 0.5 * (prm[_P_LMAX] + prm[_P_LMIN])
    amp = 0.5 * (prm[_P_LMAX] - prm[_P_LMIN])
    nr = prm[_P_NR]
    x = nr * (theta - prm[_P_C0 + ph])
    return avg + amp * math.cos(x), -amp * nr * math.sin(x)


def _pack(p: MotorParams) -> np.ndarray:
    prm = np.zeros(_P_SIZE)
    prm[_P_LMIN], prm[_P_LMAX] = p.l_min, p.l_max
    prm[_P_PERIOD] = p.period_deg
    prm[_P_NR] = p.rotor_poles
    centres = [p.aligned_deg + k * p.phase_offset_deg for k in range(3)]
    if p.profile == "trapezoid":
        ht = p.top_deg / 2.0
        prm[_P_KIND] = 0.0
        prm[_P_HT], prm[_P_LO], prm[_P_HI] = ht, -ht - p.rise_deg, ht + p.fall_deg
        prm[_P_KR] = (p.l_max - p.l_min) / p.rise_deg
        prm[_P_KF] = (p.l_max - p.l_min) / p.fall_deg
        prm[_P_C0:_P_C0 + 3] = centres
    else:
        prm[_P_KIND] = 1.0
        prm[_P_C0:_P_C0 + 3] = np.radians(centres)
    return prm


@njit(cache=True)
def _deriv(i0, i1, i2, th, om, v0, v1, v2, prm, r, b, tl, inv_j, fixed):
    te = 0.0
    d0 = d1 = d2 = 0.0
    if i0 > 0.0 or v0 > 0.0:
        ik = i0 if i0 > 0.0 else 0.0
        ll, dl = _ev(th, 0, prm)
        d0 = (v0 - r * ik - ik * om * dl) / ll
        te += 0.5 * ik * ik * dl
    if i1 > 0.0 or v1 > 0.0:
        ik = i1 if i1 > 0.0 else 0.0
        ll, dl = _ev(th, 1, prm)
        d1 = (v1 - r * ik - ik * om * dl) / ll
        te += 0.5 * ik * ik * dl
    if i2 > 0.0 or v2 > 0.0:
        ik = i2 if i2 > 0.0 else 0.0
        ll, dl = _ev(th, 2, prm)
        d2 = (v2 - r * ik - ik * om * dl) / ll
        te += 0.5 * ik * ik * dl
    dom = 0.0 if fixed else (te - b * om - tl) * inv_j
    return d0, d1, d2, om, dom


@njit(cache=True)
def _rk4(i0, i1, i2, th, om, v0, v1, v2, dt, prm, r, b, tl, inv_j, fixed):
    h2 = 0.5 * dt
    a0, a1, a2, at, aw = _deriv(i0, i1, i2, th, om, v0, v1, v2, prm, r, b, tl, inv_j, fixed)
    b0, b1, b2, bt, bw = _deriv(i0 + h2 * a0, i1 + h2 * a1, i2 + h2 * a2, th + h2 * at,
                                om + h2 * aw, v0, v1, v2, prm, r, b, tl, inv_j, fixed)
    c0, c1, c2, ct, cw = _deriv(i0 + h2 * b0, i1 + h2 * b1, i2 + h2 * b2, th + h2 * bt,
                                om + h2 * bw, v0, v1, v2, prm, r, b, tl, inv_j, fixed)
    e0, e1, e2, et, ew = _deriv(i0 + dt * c0, i1 + dt * c1, i2 + dt * c2, th + dt * ct,
                                om + dt * cw, v0, v1, v2, prm, r, b, tl, inv_j, fixed)
    h6 = dt / 6.0
    n0 = i0 + h6 * (a0 + 2.0 * b0 + 2.0 * c0 + e0)
    n1 = i1 + h6 * (a1 + 2.0 * b1 + 2.0 * c1 + e1)
    n2 = i2 + h6 * (a2 + 2.0 * b2 + 2.0 * c2 + e2)
    return (n0 if n0 > 0.0 else 0.0, n1 if n1 > 0.0 else 0.0, n2 if n2 > 0.0 else 0.0,
            th + h6 * (at + 2.0 * bt + 2.0 * ct + et), om + h6 * (aw + 2.0 * bw + 2.0 * cw + ew))


@njit(cache=True)
def _torque(i0, i1, i2, th, prm):
    te = 0.0
    if i0 > 0.0:
        te += 0.5 * i0 * i0 * _ev(th, 0, prm)[1]
    if i1 > 0.0:
        te += 0.5 * i1 * i1 * _ev(th, 1, prm)[1]
    if i2 > 0.0:
        te += 0.5 * i2 * i2 * _ev(th, 2, prm)[1]
    return te


@njit(cache=True)
def _torque_many(i, theta, prm):
    out = np.empty(len(theta))
    for k in range(len(theta)):
        out[k] = _torque(i[k, 0], i[k, 1], i[k, 2], theta[k], prm)
    return out


def torque_series(i: np.ndarray, theta: np.ndarray, plant: "Plant") -> np.ndarray:
    """Electromagnetic torque for an (n, 3) current array and n angles (rad)."""
    return _torque_many(np.ascontiguousarray(i, dtype=np.float64),
                        np.ascontiguousarray(theta, dtype=np.float64), plant._prm)


@functools.lru_cache(maxsize=64)
def _packed(params: MotorParams) -> np.ndarray:
    return _pack(params)


def inductance_model(params: MotorParams) -> Callable[[float, int], tuple[float, float]]:
    """``ev(theta_rad, phase_index) -> (L, dL/dtheta)`` for the configured profile."""
    prm = _packed(params)
    return lambda theta, ph: _ev(float(theta), int(ph), prm)


def inductance(phase: PhaseId, theta: float, params: MotorParams) -> float:
    return _ev(float(theta), int(phase), _packed(params))[0]


def d_inductance(phase: PhaseId, theta: float, params: MotorParams) -> float:
    """dL/dtheta in H/rad (one-sided at trapezoid corners)."""
    return _ev(float(theta), int(phase), _packed(params))[1]


class PlantState(NamedTuple):
    i: tuple[float, float, float] = (0.0, 0.0, 0.0)
    theta: float = 0.0
    omega: float = 0.0

    @property
    def theta_deg(self) -> float:
        return self.theta * RAD2DEG


@dataclass(frozen=True)
class SwitchConfig:
    s1: bool = False
    s2: bool = False
    upper: tuple[bool, bool, bool] = (False, False, False)
    lower: tuple[bool, bool, bool] = (False, False, False)

    @property
    def shoot_through(self) -> bool:
        return self.s1 and self.s2

    @property
    def multi_excitation(self) -> bool:
        return sum(self.upper) > 1

    def line_level(self) -> int:
        return HIGH if self.s1 else 0


class SensorReading(NamedTuple):
    i_line: float
    valid: bool


def circuit_mode(upper: bool, lower: bool, line_high: bool) -> ExcitationMode:
    """Effective winding mode of one phase.

    Both switches on with the line HIGH magnetizes. Upper on otherwise is a
    freewheeling path, including both switches on while the line is LOW
    (vehicle side shorting the port during a tag bit). Upper off demagnetizes.
    """
    if upper:
        if lower and line_high:
            return ExcitationMode.MAGNETIZE
        return ExcitationMode.FREEWHEEL
    return ExcitationMode.DEMAGNETIZE


def phase_voltage(mode: ExcitationMode, params: MotorParams) -> float:
    if mode is ExcitationMode.MAGNETIZE:
        return params.e - 2.0 * params.v_switch
    if mode is ExcitationMode.FREEWHEEL:
        return -params.v_diode - params.v_switch
    return -params.e - 2.0 * params.v_diode


class Plant:
    """Stateless stepper bound to one parameter set."""

    def __init__(self, params: MotorParams, fixed_speed: bool = False):
        self.params = params
        self.fixed_speed = fixed_speed
        self._prm = _packed(params)
        self._v = {m: phase_voltage(m, params) for m in ExcitationMode}
        self._consts = (params.r, params.b_visc, params.t_load, 1.0 / params.j, fixed_speed)

    def voltages(self, cfg: SwitchConfig, line_level: int) -> tuple[float, float, float]:
        high = line_level == HIGH
        v = self._v
        return tuple(v[circuit_mode(cfg.upper[k], cfg.lower[k], high)] for k in range(3))

    def torque(self, state: PlantState) -> float:
        i0, i1, i2 = state.i
        return _torque(i0, i1, i2, state.theta, self._prm)

    def step(self, state: PlantState, cfg: SwitchConfig, line_level: int, dt: float) -> PlantState:
        return self.step_v(state, self.voltages(cfg, line_level), dt)

    def step_v(self, state: PlantState, v: tuple[float, float, float], dt: float) -> PlantState:
        """One RK4 step with per-phase applied voltages held constant over ``dt``."""
        (i0, i1, i2), th, om = state
        r, b, tl, inv_j, fixed = self._consts
        n0, n1, n2, th, om = _rk4(i0, i1, i2, th, om, v[0], v[1], v[2], dt,
                                  self._prm, r, b, tl, inv_j, fixed)
        if not math.isfinite(th + om + n0 + n1 + n2):
            raise NonFinite(f"non-finite plant state at theta={th}, omega={om}, i={(n0, n1, n2)}")
        return PlantState((n0, n1, n2), th, om)

    def sensor(self, state: PlantState, cfg: SwitchConfig, payload: bool) -> SensorReading:
        return sensor_current(state, cfg, payload)


def sensor_current(state: PlantState, cfg: SwitchConfig, payload: bool) -> SensorReading:
    """Vehicle-side line current.

    Only during a payload, and only for the phase whose upper switch is on, does
    the line carry a winding current. Tags and demagnetizing tails read zero.
    """
    if not payload or not cfg.s1:
        return _NO_READING
    up = cfg.upper
    if up[0] + up[1] + up[2] != 1:
        return _NO_READING
    return SensorReading(state.i[up.index(True)], True)


_NO_READING = SensorReading(0.0, False)


def step(state: PlantState, cfg: SwitchConfig, line_level: int, dt: float,
         params: MotorParams, fixed_speed: bool = False) -> PlantState:
    return _plant(params, fixed_speed).step(state, cfg, line_level, dt)


@functools.lru_cache(maxsize=16)
def _plant(params: MotorParams, fixed_speed: bool) -> Plant:
    return Plant(params, fixed_speed)
