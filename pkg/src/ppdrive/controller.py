"""Vehicle-side router controller.

Runs hysteresis current control on the reconstructed current of the active
phase, sequences header/payload/footer on the line through S1/S2, and
commutates either on the measured rotor angle (validation mode) or on the
sensorless turn-off detector.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .protocol import (
    DEFAULT_CODEC,
    FOOTER,
    HEADER_BITS,
    HIGH,
    LOW,
    CommandCodec,
    ExcitationMode,
    PacketCommand,
    PhaseId,
    frame_header,
)

COMMUTATION_SOURCES = ("ground_truth", "sensorless")


@dataclass(frozen=True)
class ControllerConfig:
    i_ref: float = 0.8
    # half-width of the band: footers fire at i_ref +- delta_i
    delta_i: float = 0.3
    commutation: str = "ground_truth"
    turn_on_deg: float = 30.0
    turn_off_deg: float = 60.0

    def __post_init__(self):
        if not self.i_ref > self.delta_i > 0:
            raise ValueError("need i_ref > delta_i > 0")
        if self.commutation not in COMMUTATION_SOURCES:
            raise ValueError(f"commutation must be one of {COMMUTATION_SOURCES}")
        if self.commutation == "ground_truth" and not self.turn_off_deg > self.turn_on_deg:
            raise ValueError("turn_off_deg must exceed turn_on_deg")

    @property
    def upper_band(self) -> float:
        return self.i_ref + self.delta_i

    @property
    def lower_band(self) -> float:
        return self.i_ref - self.delta_i


class Submode(enum.IntEnum):
    MAGNETIZING = 0
    FREEWHEELING = 1


class LineFsm(enum.IntEnum):
    HEADER = 0
    PAYLOAD = 1
    FOOTER = 2


class LineAction(enum.Enum):
    CONTINUE_PAYLOAD = "continue"
    BEGIN_FOOTER = "begin_footer"


def drive_line(line_fsm: LineFsm, bit: int = HIGH) -> tuple[int, bool, bool]:
    """Line level and (S1, S2) for the current slot: HIGH is S1 on, LOW is S2 on."""
    if line_fsm is LineFsm.PAYLOAD or bit == HIGH:
        return HIGH, True, False
    return LOW, False, True


def _mode(sub: Submode) -> ExcitationMode:
    return ExcitationMode.MAGNETIZE if sub is Submode.MAGNETIZING else ExcitationMode.FREEWHEEL


_COMMANDS = {(ph, sub): PacketCommand(ph, _mode(sub)) for ph in PhaseId for sub in Submode}


class VehicleController:
    """Packet scheduler plus hysteresis controller.

    Call order per simulation step: :meth:`drive_line` before the plant step,
    then :meth:`on_sample` with the reconstructed current, then :meth:`tick`.
    """

    def __init__(self, cfg: ControllerConfig, samples_per_bit: int,
                 initial_phase: PhaseId = PhaseId.A, codec: CommandCodec = DEFAULT_CODEC):
        self.cfg = cfg
        self.spb = samples_per_bit
        self.codec = codec
        self.active_phase = initial_phase
        self.submode = Submode.MAGNETIZING
        self.commutations = 0
        self.headers_sent = 0
        self.footers_sent = 0
        self._footer_requested = False
        self._begin_header()

    # -- line sequencing -------------------------------------------------
    def _begin_header(self):
        self.packet_cmd = _COMMANDS[self.active_phase, self.submode]
        self._packet_key = (self.active_phase, self.submode)
        self.frame = frame_header(self.packet_cmd, self.codec).bits
        self.line_fsm = LineFsm.HEADER
        self.bit_index = 0
        self._slot_step = 0
        self.headers_sent += 1

    def _begin_footer(self):
        self.frame = FOOTER
        self.line_fsm = LineFsm.FOOTER
        self.bit_index = 0
        self._slot_step = 0
        self.footers_sent += 1
        self._footer_requested = False

    @property
    def current_bit(self) -> int:
        if self.line_fsm is LineFsm.PAYLOAD:
            return HIGH
        return self.frame[self.bit_index]

    @property
    def in_payload(self) -> bool:
        return self.line_fsm is LineFsm.PAYLOAD

    def drive_line(self) -> tuple[int, bool, bool]:
        return drive_line(self.line_fsm, self.current_bit)

    @property
    def desired_cmd(self) -> PacketCommand:
        return _COMMANDS[self.active_phase, self.submode]

    def on_sample(self, valid: bool, est: float) -> LineAction:
        """Hysteresis decision on the active phase's reconstructed current.

        Only payload samples are acted on; invalid samples never trigger a
        threshold. A footer is requested whenever the command wanted next
        differs from the one the current packet carries.
        """
        if self.line_fsm is not LineFsm.PAYLOAD:
            return LineAction.CONTINUE_PAYLOAD
        if valid and self.packet_cmd.phase == self.active_phase:
            if self.submode is Submode.MAGNETIZING:
                if est >= self.cfg.upper_band:
                    self.submode = Submode.FREEWHEELING
            elif est <= self.cfg.lower_band:
                self.submode = Submode.MAGNETIZING
        if (self.active_phase, self.submode) != self._packet_key:
            self._footer_requested = True
            return LineAction.BEGIN_FOOTER
        return LineAction.CONTINUE_PAYLOAD

    def tick(self) -> PacketCommand | None:
        """Advance the line by one step. Returns the new header command, if any."""
        fsm = self.line_fsm
        if fsm is LineFsm.PAYLOAD:
            if self._footer_requested:
                self._begin_footer()
            return None
        self._slot_step += 1
        if self._slot_step < self.spb:
            return None
        self._slot_step = 0
        self.bit_index += 1
        if fsm is LineFsm.HEADER:
            if self.bit_index == HEADER_BITS:
                self.line_fsm = LineFsm.PAYLOAD
                self._footer_requested = False
            return None
        if self.bit_index == len(FOOTER):
            # the next command is fixed here, from the last payload's measurements
            self._begin_header()
            return self.packet_cmd
        return None

    # -- commutation ------------------------------------------------------
    def commutate(self) -> PhaseId:
        self.active_phase = self.active_phase.successor()
        self.submode = Submode.MAGNETIZING
        self.commutations += 1
        if self.line_fsm is LineFsm.PAYLOAD:
            self._footer_requested = True
        return self.active_phase


class AngleCommutator:
    """Validation-mode commutation from the measured rotor angle.

    Phase X conducts on ``[turn_on + k*offset, turn_off + k*offset)`` modulo the
    inductance period, k being the phase index. Commutation fires when the
    unwrapped angle crosses the active phase's turn-off angle.
    """

    def __init__(self, turn_on_deg: float, turn_off_deg: float, theta0: float,
                 phase_offset_deg: float = 30.0, period_deg: float = 90.0):
        self.on = turn_on_deg
        self.off = turn_off_deg
        self.offset = phase_offset_deg
        self.period = period_deg
        self.phase = initial_phase(theta0, turn_on_deg, phase_offset_deg, period_deg)
        th0 = math.degrees(theta0)
        target = turn_off_deg + int(self.phase) * phase_offset_deg
        # first turn-off crossing strictly ahead of theta0
        n = math.floor((th0 - target) / period_deg) + 1
        self.next_off = math.radians(target + n * period_deg)

    def update(self, theta: float) -> bool:
        if theta >= self.next_off:
            self.phase = self.phase.successor()
            self.next_off += math.radians(self.offset)
            if self.phase is PhaseId.A:
                self.next_off += math.radians(self.period - 3 * self.offset)
            return True
        return False


def initial_phase(theta0: float, turn_on_deg: float, phase_offset_deg: float = 30.0,
                  period_deg: float = 90.0) -> PhaseId:
    """Phase whose conduction window (starting at its turn-on angle) contains theta0."""
    th = math.degrees(theta0)
    best, best_d = PhaseId.A, math.inf
    for ph in PhaseId:
        d = (th - (turn_on_deg + int(ph) * phase_offset_deg)) % period_deg
        if d < best_d:
            best, best_d = ph, d
    return best
