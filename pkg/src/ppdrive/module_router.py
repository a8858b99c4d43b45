"""Passive module-side router.

The router sees nothing but sampled line bits. It latches the command of each
header, drives the asymmetric half-bridge gates accordingly and keeps them
until the footer has been read. Between packets the latched phase is left on
an internal freewheeling path so its current keeps circulating through tags.
"""
from __future__ import annotations

import enum
import functools

from .protocol import (
    DEFAULT_CODEC,
    FOOTER_BITS,
    HEADER_BITS,
    HIGH,
    LOW,
    CommandCodec,
    ExcitationMode,
    FooterDetector,
    InvalidCode,
    PacketCommand,
    bits_code,
)

Gates = tuple[tuple[bool, bool], tuple[bool, bool], tuple[bool, bool]]

ALL_OFF: Gates = ((False, False), (False, False), (False, False))


class RouterFsm(enum.IntEnum):
    IDLE = 0
    READING_HEADER = 1
    PAYLOAD = 2
    FOOTER_RUN = 3


def _gates(phase: int, upper: bool, lower: bool) -> Gates:
    return tuple((upper, lower) if k == phase else (False, False) for k in range(3))


@functools.lru_cache(maxsize=None)
def gate_outputs(fsm: RouterFsm, latched: PacketCommand | None) -> Gates:
    """Gate states of all three legs as a function of router state alone."""
    if latched is None:
        return ALL_OFF
    if fsm in (RouterFsm.PAYLOAD, RouterFsm.FOOTER_RUN):
        return _gates(latched.phase, True, latched.mode is ExcitationMode.MAGNETIZE)
    return _gates(latched.phase, True, False)


class ModuleRouter:
    """Tag-driven gate controller for the three phase legs.

    Outputs are a pure function of ``(fsm, latched)``:

    ============== =================== =====================
    fsm            latched magnetize   latched freewheel
    ============== =================== =====================
    PAYLOAD        (d) ON/ON           (e) ON/OFF
    FOOTER_RUN     (g) ON/ON           (h) ON/OFF
    IDLE / header  (i) ON/OFF          (i) ON/OFF
    ============== =================== =====================

    Non-latched phases are OFF/OFF (f). Before any packet everything is off.
    """

    def __init__(self, codec: CommandCodec = DEFAULT_CODEC):
        self.codec = codec
        self.fsm = RouterFsm.IDLE
        self.latched: PacketCommand | None = None
        # integer code of ``latched``, -1 before the first packet
        self.latched_code = -1
        self.invalid_codes = 0
        self.footer_events = 0
        self._header: list[int] = []
        self._footer = FooterDetector(FOOTER_BITS)

    @property
    def bit_index(self) -> int:
        return len(self._header)

    @property
    def footer_count(self) -> int:
        return self._footer.count

    @property
    def outputs(self) -> Gates:
        return gate_outputs(self.fsm, self.latched)

    def switching_state(self, phase: int) -> str:
        """Row label (d)..(i) of the switching table for ``phase``."""
        cmd = self.latched
        if cmd is None or int(cmd.phase) != phase:
            return "f"
        magnetize = cmd.mode is ExcitationMode.MAGNETIZE
        if self.fsm is RouterFsm.PAYLOAD:
            return "d" if magnetize else "e"
        if self.fsm is RouterFsm.FOOTER_RUN:
            return "g" if magnetize else "h"
        return "i"

    def on_bit(self, level: int) -> None:
        """Consume one mid-slot sample of the line."""
        if not isinstance(level, int) or level not in (HIGH, LOW):
            raise TypeError(f"module router only accepts line levels, got {level!r}")
        fsm = self.fsm
        if fsm is RouterFsm.IDLE:
            if level == HIGH:
                self._header = [HIGH]
                self.fsm = RouterFsm.READING_HEADER
            else:
                # stuck-LOW or the tail of a footer; repeated events are harmless
                if self._footer.push(level):
                    self.footer_events += 1
            return
        if fsm is RouterFsm.READING_HEADER:
            self._header.append(int(level))
            if len(self._header) == HEADER_BITS:
                code = bits_code(self._header[1:])
                self._header = []
                try:
                    cmd = self.codec.decode(code)
                except InvalidCode:
                    self.invalid_codes += 1
                    self.fsm = RouterFsm.IDLE
                    return
                self.latched = cmd
                self.latched_code = code
                self._footer.reset()
                self.fsm = RouterFsm.PAYLOAD
            return
        # PAYLOAD or FOOTER_RUN
        if self._footer.push(level):
            self.on_footer_end()
        elif level == LOW:
            self.fsm = RouterFsm.FOOTER_RUN
        else:
            self.fsm = RouterFsm.PAYLOAD

    def on_footer_end(self) -> None:
        self.footer_events += 1
        self._footer.reset()
        self._header = []
        self.fsm = RouterFsm.IDLE
