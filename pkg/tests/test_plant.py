import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppdrive.plant import (
    MotorParams,
    NonFinite,
    Plant,
    PlantState,
    SwitchConfig,
    circuit_mode,
    d_inductance,
    inductance,
    phase_voltage,
    sensor_current,
    step,
)
from ppdrive.protocol import HIGH, LOW, ExcitationMode, PhaseId

DEFAULT = MotorParams()
COSINE = MotorParams(profile="raised_cosine")
MAG, FW, DEMAG = ExcitationMode.MAGNETIZE, ExcitationMode.FREEWHEEL, ExcitationMode.DEMAGNETIZE
angles = st.floats(-20.0, 20.0, allow_nan=False)

# phase A sits on its flat minimum between 0 and 20 degrees
FLAT = math.radians(10.0)


def only(k, upper=True, lower=True, s1=True):
    up = tuple(upper if j == k else False for j in range(3))
    lo = tuple(lower if j == k else False for j in range(3))
    return SwitchConfig(s1=s1, s2=not s1, upper=up, lower=lo)


@pytest.mark.parametrize("params", [DEFAULT, COSINE])
def test_aligned_and_unaligned(params):
    for ph in PhaseId:
        al = math.radians(params.aligned_angle_deg(ph))
        assert inductance(ph, al, params) == pytest.approx(params.l_max)
        assert inductance(ph, al + math.radians(params.period_deg / 2), params) == pytest.approx(params.l_min)


def test_phase_a_peaks_at_45():
    assert DEFAULT.aligned_angle_deg(PhaseId.A) == 45.0
    grid = np.radians(np.linspace(0, 90, 9001))
    L = [inductance(PhaseId.A, th, DEFAULT) for th in grid]
    assert math.degrees(grid[int(np.argmax(L))]) == pytest.approx(45.0, abs=0.01)


def test_raised_cosine_midpoint():
    mid = math.radians(COSINE.aligned_angle_deg(PhaseId.A) + COSINE.period_deg / 4)
    assert inductance(PhaseId.A, mid, COSINE) == pytest.approx((COSINE.l_max + COSINE.l_min) / 2)


@pytest.mark.parametrize("params", [DEFAULT, COSINE])
@given(theta=angles)
def test_periodic_and_shifted(params, theta):
    period = math.radians(params.period_deg)
    shift = math.radians(params.phase_offset_deg)
    for ph in PhaseId:
        assert inductance(ph, theta + period, params) == pytest.approx(inductance(ph, theta, params), rel=1e-9)
    assert inductance(PhaseId.B, theta + shift, params) == pytest.approx(inductance(PhaseId.A, theta, params), rel=1e-9)
    assert inductance(PhaseId.C, theta + 2 * shift, params) == pytest.approx(inductance(PhaseId.A, theta, params), rel=1e-9)


@pytest.mark.parametrize("params", [DEFAULT, COSINE])
@given(theta=angles)
def test_derivative_matches_finite_difference(params, theta):
    h = 1e-7
    # stay off the trapezoid corners
    corners = np.radians([0.0, 20.0, 45.0])
    period = math.radians(params.period_deg)
    if params.profile == "trapezoid" and np.min(np.abs((theta - corners + period / 2) % period - period / 2)) < 1e-5:
        return
    fd = (inductance(PhaseId.A, theta + h, params) - inductance(PhaseId.A, theta - h, params)) / (2 * h)
    assert d_inductance(PhaseId.A, theta, params) == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_phase_voltages():
    assert phase_voltage(MAG, DEFAULT) == 24.0
    assert phase_voltage(FW, DEFAULT) == 0.0
    assert phase_voltage(DEMAG, DEFAULT) == -24.0
    p = MotorParams(v_diode=0.7, v_switch=0.3)
    assert phase_voltage(MAG, p) == pytest.approx(24.0 - 0.6)
    assert phase_voltage(FW, p) == pytest.approx(-1.0)
    assert phase_voltage(DEMAG, p) == pytest.approx(-24.0 - 1.4)


def test_circuit_modes():
    assert circuit_mode(True, True, True) is MAG
    assert circuit_mode(True, True, False) is FW
    assert circuit_mode(True, False, True) is FW
    assert circuit_mode(True, False, False) is FW
    assert circuit_mode(False, False, True) is DEMAG
    assert circuit_mode(False, True, True) is DEMAG


def test_equilibrium():
    s = PlantState((0.0, 0.0, 0.0), 0.3, 0.0)
    p = MotorParams(t_load=0.0)
    out = step(s, SwitchConfig(), LOW, 1e-6, p)
    assert out == s


def test_demagnetize_at_zero_stays_zero():
    s = PlantState((0.0, 0.0, 0.0), FLAT, 0.0)
    for cfg in (SwitchConfig(s1=True), only(0, upper=False, lower=False)):
        out = step(s, cfg, HIGH, 1e-6, DEFAULT, fixed_speed=True)
        assert out.i == (0.0, 0.0, 0.0)


def test_constant_l_ramp_is_exact():
    p = MotorParams(r=0.0)
    plant = Plant(p, fixed_speed=True)
    s = PlantState((0.0, 0.0, 0.0), FLAT, 0.0)
    dt, n = 1e-6, 500
    for _ in range(n):
        s = plant.step(s, only(0), HIGH, dt)
    assert s.i[0] == pytest.approx(p.e * n * dt / p.l_min, rel=1e-12)


def test_demagnetize_decay_matches_closed_form():
    p = DEFAULT
    plant = Plant(p, fixed_speed=True)
    s = PlantState((0.8, 0.0, 0.0), FLAT, 0.0)
    dt = 1e-6
    tau = p.l_min / p.r
    for k in range(1, 251):
        s = plant.step(s, only(0, upper=False, lower=False), HIGH, dt)
        t = k * dt
        exact = (0.8 + p.e / p.r) * math.exp(-t / tau) - p.e / p.r
        assert s.i[0] == pytest.approx(exact, rel=1e-9)
    assert s.i[0] > 0


def test_demagnetize_clamps_at_zero():
    plant = Plant(DEFAULT, fixed_speed=True)
    s = PlantState((0.05, 0.0, 0.0), FLAT, 0.0)
    for _ in range(200):
        s = plant.step(s, only(0, upper=False, lower=False), HIGH, 1e-6)
    assert s.i[0] == 0.0


def test_energy_balance_constant_l():
    p = MotorParams(r=0.0)
    plant = Plant(p, fixed_speed=True)
    s = PlantState((0.0, 0.0, 0.0), FLAT, 0.0)
    dt, n = 1e-6, 1000
    i = [0.0]
    for _ in range(n):
        s = plant.step(s, only(0), HIGH, dt)
        i.append(s.i[0])
    i = np.array(i)
    # Simpson's rule is exact for the linear current ramp
    delivered = p.e * dt / 3 * (i[0] + i[-1] + 4 * i[1:-1:2].sum() + 2 * i[2:-1:2].sum())
    stored = 0.5 * p.l_min * i[-1] ** 2
    assert delivered == pytest.approx(stored, rel=1e-6)


def _terminal(dt, t_end=2e-3):
    p = MotorParams(profile="raised_cosine", j=1e-5, t_load=0.0, b_visc=1e-4)
    plant = Plant(p)
    s = PlantState((0.5, 0.3, 0.0), math.radians(20.0), 40.0)
    v = (p.e, 0.0, 0.0)
    for _ in range(round(t_end / dt)):
        s = plant.step_v(s, v, dt)
    return np.array([*s.i, s.theta, s.omega])


def test_rk4_convergence_order():
    dt = 4e-5
    ref = _terminal(dt / 16)
    e1 = np.max(np.abs(_terminal(dt) - ref))
    e2 = np.max(np.abs(_terminal(dt / 2) - ref))
    assert math.log2(e1 / e2) >= 3.5


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.sampled_from([MAG, FW, DEMAG]), st.integers(1, 300)),
                min_size=1, max_size=12))
def test_currents_never_negative(schedule):
    plant = Plant(DEFAULT)
    s = PlantState((0.0, 0.0, 0.0), math.radians(31.0), 15.0)
    for k, mode, n in schedule:
        v = [phase_voltage(DEMAG, DEFAULT)] * 3
        v[k] = phase_voltage(mode, DEFAULT)
        for _ in range(n):
            s = plant.step_v(s, tuple(v), 1e-6)
            assert min(s.i) >= 0.0


def test_torque_positive_on_rising_inductance():
    plant = Plant(DEFAULT)
    for deg in (22.0, 30.0, 40.0):
        s = PlantState((0.8, 0.0, 0.0), math.radians(deg), 10.0)
        assert plant.torque(s) > 0


def test_theta_advances_with_positive_speed():
    plant = Plant(DEFAULT)
    s = PlantState((0.8, 0.0, 0.0), math.radians(30.0), 10.0)
    for _ in range(1000):
        s2 = plant.step(s, only(0), HIGH, 1e-6)
        assert s2.theta >= s.theta
        s = s2


def test_fixed_speed_freezes_omega():
    plant = Plant(DEFAULT, fixed_speed=True)
    s = PlantState((0.8, 0.0, 0.0), math.radians(30.0), 12.0)
    for _ in range(100):
        s = plant.step(s, only(0), HIGH, 1e-6)
    assert s.omega == 12.0


def test_non_finite_raises():
    plant = Plant(DEFAULT)
    with pytest.raises(NonFinite):
        plant.step_v(PlantState((0.0, 0.0, 0.0), 0.0, 1e308), (0.0, 0.0, 0.0), 1e-6)


def test_sensor_reads_excited_phase_in_payload():
    s = PlantState((0.1, 0.9, 0.2), 0.0, 0.0)
    r = sensor_current(s, only(1), payload=True)
    assert r.valid and r.i_line == 0.9
    r = sensor_current(s, only(1, lower=False), payload=True)
    assert r.valid and r.i_line == 0.9


def test_sensor_blind_during_tags_and_demagnetization():
    s = PlantState((0.4, 0.9, 0.0), 0.0, 0.0)
    assert not sensor_current(s, only(1), payload=False).valid
    assert sensor_current(s, only(1), payload=False).i_line == 0.0
    # every upper switch off: demagnetizing tails are invisible to the line
    r = sensor_current(s, SwitchConfig(s1=True), payload=True)
    assert not r.valid and r.i_line == 0.0


def test_switch_config_flags():
    assert SwitchConfig(s1=True, s2=True).shoot_through
    assert SwitchConfig(upper=(True, True, False)).multi_excitation
    assert not only(0).shoot_through and not only(0).multi_excitation


@pytest.mark.parametrize("kw", [dict(l_min=0.05), dict(j=0.0), dict(e=0.0), dict(r=-1.0),
                                dict(profile="square"), dict(rise_deg=50.0, fall_deg=50.0)])
def test_param_validation(kw):
    with pytest.raises(ValueError):
        MotorParams(**kw)
