"""Closed-loop simulation: controller -> line -> module router -> plant -> sensor -> estimator.

Per step, in order: the controller drives the line, the reading circuit
samples it, the module router updates its gates, the plant is integrated over
``dt``, the vehicle-side sensor is read, the current is reconstructed, the
controller runs its hysteresis decision and the turn-off detector is updated.
Each step produces one trace row stamped with the time at the end of the step.
"""
from __future__ import annotations

import math
import random
from array import array
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .controller import AngleCommutator, LineFsm, VehicleController, initial_phase
from .estimator import TurnoffEstimator, reconstruct
from .module_router import ModuleRouter, RouterFsm, gate_outputs
from .plant import Plant, PlantState, SwitchConfig, sensor_current, torque_series
from .protocol import (
    ALL_COMMANDS,
    HEADER_BITS,
    BitFlipChannel,
    BitSampler,
    ExcitationMode,
    PhaseId,
    encode_command,
    samples_per_bit,
)

SCHEMA_VERSION = 1
HEADER_CODE_BITS = HEADER_BITS - 1

# (name, array typecode); 'd' float64, 'b' int8
COLUMNS: tuple[tuple[str, str], ...] = (
    ("t", "d"),
    ("i_A", "d"), ("i_B", "d"), ("i_C", "d"),
    ("theta_deg", "d"), ("theta_mod90_deg", "d"), ("omega", "d"), ("torque", "d"),
    ("i_line", "d"), ("line_valid", "b"), ("line_level", "b"),
    ("s1", "b"), ("s2", "b"),
    ("upper_A", "b"), ("lower_A", "b"), ("upper_B", "b"), ("lower_B", "b"),
    ("upper_C", "b"), ("lower_C", "b"),
    ("latched_cmd", "b"), ("router_fsm", "b"),
    ("active_phase", "b"), ("submode", "b"), ("line_fsm", "b"), ("line_bit", "b"),
    ("packet_phase", "b"), ("packet_mode", "b"),
    ("est_iA", "d"), ("est_iB", "d"), ("est_iC", "d"),
    ("valid_A", "b"), ("valid_B", "b"), ("valid_C", "b"),
    ("slope", "d"), ("slope_theta_deg", "d"),
    ("detect_phase", "b"), ("commutation", "b"),
)
COLUMN_NAMES = tuple(c for c, _ in COLUMNS)

@dataclass
class Trace:
    """Column-oriented trace; every column has one entry per simulation step."""

    columns: dict[str, np.ndarray]
    dt: float
    period_deg: float = 90.0
    aligned_deg: tuple[float, float, float] = (45.0, 75.0, 15.0)
    i_ref: float = 0.8
    delta_i: float = 0.3
    tol: float = 0.03
    schema_version: int = SCHEMA_VERSION
    counters: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.columns["t"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def to_csv(self, path) -> None:
        """Write the trace; the first line carries the schema version."""
        with open(path, "w", newline="") as fh:
            fh.write(f"# ppdrive-trace schema={self.schema_version} dt={self.dt!r}\n")
            fh.write(",".join(COLUMN_NAMES) + "\n")
            cols = [self.columns[c] for c in COLUMN_NAMES]
            fmt = [_fmt_float if self.columns[c].dtype.kind == "f" else str for c in COLUMN_NAMES]
            n = len(self)
            chunk = 20000
            for a in range(0, n, chunk):
                b = min(n, a + chunk)
                lists = [col[a:b].tolist() for col in cols]
                rows = zip(*lists)
                fh.write("".join(",".join(f(v) for f, v in zip(fmt, row)) + "\n" for row in rows))


def _fmt_float(v: float) -> str:
    return "" if v != v else repr(v)


def read_trace_csv(path) -> dict[str, np.ndarray]:
    import pandas as pd

    df = pd.read_csv(path, comment="#", float_precision="round_trip")
    return {c: df[c].to_numpy() for c in df.columns}


class Simulation:
    """One deterministic closed-loop run."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        m, c, s = cfg.motor, cfg.controller, cfg.sim
        self.spb = samples_per_bit(cfg.protocol.t_bit, s.dt)
        self.plant = Plant(m, fixed_speed=s.fixed_speed)
        theta0 = math.radians(s.theta0_deg)
        self.state = PlantState((0.0, 0.0, 0.0), theta0, s.omega0)
        phase0 = initial_phase(theta0, c.turn_on_deg, m.phase_offset_deg, m.period_deg)
        self.controller = VehicleController(c, self.spb, phase0)
        self.router = ModuleRouter()
        self.sampler = BitSampler(self.spb)
        # independent streams for the channel and the sensor
        self.channel = BitFlipChannel(cfg.protocol.flip_prob, seed=s.seed * 2 + 1)
        self._noise = random.Random(s.seed * 2 + 2)
        self.estimator = TurnoffEstimator(c.i_ref, cfg.estimator.detector(),
                                          cfg.estimator.slope_method, cfg.estimator.trim)
        self.commutator = None
        if c.commutation == "ground_truth":
            self.commutator = AngleCommutator(c.turn_on_deg, c.turn_off_deg, theta0,
                                              m.phase_offset_deg, m.period_deg)
        self.step_index = 0
        self.counters = {"shoot_through": 0, "multi_excitation": 0, "lower_without_upper": 0,
                         "bit_flips": 0, "invalid_codes": 0, "slopes_skipped": 0}
        self._sw_cache: dict = {}

    def _switch(self, level: int, s1: bool, s2: bool, gates):
        key = (level, s1, s2, gates)
        hit = self._sw_cache.get(key)
        if hit is None:
            upper = tuple(g[0] for g in gates)
            lower = tuple(g[1] for g in gates)
            sw = SwitchConfig(s1, s2, upper, lower)
            v = self.plant.voltages(sw, level)
            bad = (sw.shoot_through, sw.multi_excitation,
                   any(lo and not up for up, lo in gates))
            bad = bad if any(bad) else None
            hit = self._sw_cache[key] = (sw, v, bad)
        return hit

    def run(self, n_steps: int | None = None) -> Trace:
        """Advance ``n_steps`` (default: the configured duration) and return their rows.

        Repeated calls continue from where the previous one stopped.
        """
        cfg = self.cfg
        n = cfg.n_steps if n_steps is None else n_steps
        dt = cfg.sim.dt
        noise = cfg.sim.sensor_noise
        gauss = self._noise.gauss
        ctrl, router, sampler, channel = self.controller, self.router, self.sampler, self.channel
        est, plant, commutator = self.estimator, self.plant, self.commutator
        sensorless = cfg.controller.commutation == "sensorless"
        counters = self.counters
        PAYLOAD = LineFsm.PAYLOAD
        MAG = ExcitationMode.MAGNETIZE
        switch = self._switch
        rad2deg = 180.0 / math.pi

        # six floats per step (i_A, i_B, i_C, theta, omega, i_line) and one packed int
        floats = array("d")
        codes = array("i")
        put_f, put_c = floats.extend, codes.append
        slopes: list[tuple[int, float, int]] = []
        detections: list[tuple[int, int]] = []
        commutations: list[int] = []
        step0 = self.step_index

        state = self.state
        for k in range(step0, step0 + n):
            line_fsm = ctrl.line_fsm
            payload = line_fsm is PAYLOAD
            line_bit = ctrl.current_bit
            level, s1, s2 = ctrl.drive_line()
            bit = sampler.push(level)
            if bit is not None:
                router.on_bit(channel.apply(bit))
            gates = router.outputs
            sw, v, bad = switch(level, s1, s2, gates)
            if bad:
                self._count_bad(bad)

            state = plant.step_v(state, v, dt)
            t = (k + 1) * dt

            reading = sensor_current(state, sw, payload)
            if noise and reading.valid:
                reading = type(reading)(reading.i_line + gauss(0.0, noise), True)
            pkt = ctrl.packet_cmd
            pk = pkt.phase
            sample = reconstruct(reading, pk, payload, t)
            valid = sample.valid[pk]
            i_est = sample.est[pk]
            ctrl.on_sample(valid, i_est)

            magnetizing = payload and pkt.mode is MAG and pk == ctrl.active_phase
            entry, det = est.update(t, i_est, valid, magnetizing, k)
            if entry is not None:
                th_n = floats[6 * (entry.step_n - step0) + 3] if entry.step_n < k else state.theta
                entry.theta_n = th_n
                slopes.append((k, entry.slope, entry.step_n))
            if det is not None:
                detections.append((k, int(ctrl.active_phase)))
                if sensorless:
                    ctrl.commutate()
                    est.reset()
                    commutations.append(k)
            if commutator is not None and commutator.update(state.theta):
                ctrl.commutate()
                est.reset()
                commutations.append(k)

            # row: line/gates applied during the step, state at its end
            i = state.i
            put_f((i[0], i[1], i[2], state.theta, state.omega, reading.i_line))
            put_c(level | reading.valid << 1 | (router.latched_code + 1) << 2 | router.fsm << 6
                  | ctrl.active_phase << 8 | ctrl.submode << 10 | line_fsm << 11 | line_bit << 13
                  | pk << 14 | (pkt.mode is not MAG) << 16)
            ctrl.tick()

        self.step_index = step0 + n
        self.state = state
        counters["bit_flips"] = channel.flips
        counters["invalid_codes"] = router.invalid_codes
        counters["slopes_skipped"] = est.skipped
        columns = _expand(np.frombuffer(floats, dtype=np.float64).reshape(-1, 6),
                          np.frombuffer(codes, dtype=codes.typecode), step0, dt, cfg,
                          self.plant, slopes, detections, commutations)
        m = cfg.motor
        return Trace(columns, dt, m.period_deg, tuple(m.aligned_angle_deg(p) for p in PhaseId),
                     cfg.controller.i_ref, cfg.controller.delta_i,
                     cfg.sim.band_tol_fraction * cfg.controller.delta_i, counters=dict(counters))

    def _count_bad(self, bad: tuple[bool, bool, bool]) -> None:
        for name, hit in zip(("shoot_through", "multi_excitation", "lower_without_upper"), bad):
            self.counters[name] += hit


def _gate_table() -> np.ndarray:
    """Gate bits indexed by [router_fsm, latched_code + 1] -> 6 flags (A up/lo, B, C)."""
    table = np.zeros((len(RouterFsm), 1 << HEADER_CODE_BITS + 1, 6), dtype=np.int8)
    for fsm in RouterFsm:
        for cmd in (None,) + ALL_COMMANDS:
            code = -1 if cmd is None else encode_command(cmd)
            gates = gate_outputs(fsm, cmd)
            table[fsm, code + 1] = [g for leg in gates for g in leg]
    return table


def _expand(f: np.ndarray, c: np.ndarray, step0: int, dt: float, cfg: ScenarioConfig,
            plant: Plant, slopes, detections, commutations) -> dict[str, np.ndarray]:
    n = len(c)
    c = c.astype(np.int64)
    period = cfg.motor.period_deg
    out: dict[str, np.ndarray] = {}
    out["t"] = (np.arange(step0, step0 + n) + 1) * dt
    out["i_A"], out["i_B"], out["i_C"] = (f[:, j].copy() for j in range(3))
    theta_deg = np.degrees(f[:, 3])
    out["theta_deg"] = theta_deg
    out["theta_mod90_deg"] = theta_deg % period
    out["omega"] = f[:, 4].copy()
    out["torque"] = torque_series(f[:, :3], f[:, 3], plant)
    out["i_line"] = f[:, 5].copy()

    def bits(shift, width=1, offset=0):
        return (((c >> shift) & ((1 << width) - 1)) + offset).astype(np.int8)

    level = bits(0)
    out["line_valid"] = bits(1)
    out["line_level"] = level
    out["s1"] = level
    out["s2"] = (1 - level).astype(np.int8)
    latched = bits(2, 4, -1)
    fsm = bits(6, 2)
    gates = _GATES[fsm.astype(np.int64), latched.astype(np.int64) + 1] if n else np.zeros((0, 6), np.int8)
    for j, name in enumerate(("upper_A", "lower_A", "upper_B", "lower_B", "upper_C", "lower_C")):
        out[name] = gates[:, j].copy()
    out["latched_cmd"] = latched
    out["router_fsm"] = fsm
    out["active_phase"] = bits(8, 2)
    out["submode"] = bits(10)
    line_fsm = bits(11, 2)
    out["line_fsm"] = line_fsm
    out["line_bit"] = bits(13)
    pp = bits(14, 2)
    out["packet_phase"] = pp
    out["packet_mode"] = bits(16)
    valid = (line_fsm == LineFsm.PAYLOAD) & (out["line_valid"] == 1)
    for j, ph in enumerate("ABC"):
        mine = valid & (pp == j)
        out[f"est_i{ph}"] = np.where(mine, out["i_line"], 0.0)
        out[f"valid_{ph}"] = mine.astype(np.int8)
    out["slope"] = np.full(n, np.nan)
    out["slope_theta_deg"] = np.full(n, np.nan)
    for k, m, k_n in slopes:
        out["slope"][k - step0] = m
        out["slope_theta_deg"][k - step0] = theta_deg[k_n - step0] % period
    out["detect_phase"] = np.full(n, -1, dtype=np.int8)
    for k, ph in detections:
        out["detect_phase"][k - step0] = ph
    out["commutation"] = np.zeros(n, dtype=np.int8)
    for k in commutations:
        out["commutation"][k - step0] = 1
    return {name: out[name] for name in COLUMN_NAMES}


_GATES = _gate_table()


def simulate(cfg: ScenarioConfig) -> Trace:
    return Simulation(cfg).run()
