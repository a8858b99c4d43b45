"""Power-packet information tags: command table, header/footer framing, bit sampling.

A packet on the line is ``header | payload | footer``. The header is a HIGH
start bit followed by a 3-bit excitation command; the footer is four LOW bits.
During the payload the line is held HIGH, so a footer can never be confused
with payload and a header start bit can never be confused with a footer.
"""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

LOW = 0
HIGH = 1

HEADER_BITS = 4
FOOTER_BITS = 4
FOOTER = (LOW,) * FOOTER_BITS

DEFAULT_T_BIT = 10e-6


class InvalidCode(ValueError):
    """A 3-bit code that maps to no command (corrupted tag)."""


class PhaseId(enum.IntEnum):
    A = 0
    B = 1
    C = 2

    def successor(self) -> "PhaseId":
        return PhaseId((self + 1) % 3)


class ExcitationMode(enum.Enum):
    MAGNETIZE = "magnetize"
    FREEWHEEL = "freewheel"
    # implied for every phase a command does not name; never encoded
    DEMAGNETIZE = "demagnetize"


@dataclass(frozen=True)
class PacketCommand:
    phase: PhaseId
    mode: ExcitationMode

    def __post_init__(self):
        if self.mode is ExcitationMode.DEMAGNETIZE:
            raise ValueError("demagnetize cannot be carried in a command")

    def __str__(self):
        return f"{self.phase.name}:{self.mode.value}"


MAG = ExcitationMode.MAGNETIZE
FW = ExcitationMode.FREEWHEEL

ALL_COMMANDS = tuple(PacketCommand(p, m) for p in PhaseId for m in (MAG, FW))

# LSB selects the mode, upper two bits the phase (01=A, 10=B, 11=C).
# 000 and 001 stay unused. Only 100 = (B, magnetize) is pinned by the
# reference waveform; the rest is a free choice and may be replaced.
DEFAULT_COMMAND_TABLE: Mapping[PacketCommand, int] = {
    PacketCommand(PhaseId.A, MAG): 0b010,
    PacketCommand(PhaseId.A, FW): 0b011,
    PacketCommand(PhaseId.B, MAG): 0b100,
    PacketCommand(PhaseId.B, FW): 0b101,
    PacketCommand(PhaseId.C, MAG): 0b110,
    PacketCommand(PhaseId.C, FW): 0b111,
}


class CommandCodec:
    """Bidirectional mapping between the six commands and 3-bit codes."""

    def __init__(self, table: Mapping[PacketCommand, int] = DEFAULT_COMMAND_TABLE):
        if set(table) != set(ALL_COMMANDS):
            raise ValueError("command table must cover exactly the 6 commands")
        codes = list(table.values())
        if len(set(codes)) != len(codes) or not all(0 <= c < 8 for c in codes):
            raise ValueError("command codes must be distinct 3-bit values")
        self._encode = dict(table)
        self._decode = {c: cmd for cmd, c in table.items()}

    def encode(self, cmd: PacketCommand) -> int:
        return self._encode[cmd]

    def decode(self, code: int) -> PacketCommand:
        try:
            return self._decode[code]
        except KeyError:
            raise InvalidCode(f"unused command code {code:03b}") from None

    @property
    def invalid_codes(self) -> tuple[int, ...]:
        return tuple(c for c in range(8) if c not in self._decode)

    def rows(self) -> list[tuple[str, PacketCommand]]:
        return [(f"{code:03b}", cmd) for code, cmd in sorted(self._decode.items())]


DEFAULT_CODEC = CommandCodec()


def encode_command(cmd: PacketCommand, codec: CommandCodec = DEFAULT_CODEC) -> int:
    return codec.encode(cmd)


def decode_command(code: int, codec: CommandCodec = DEFAULT_CODEC) -> PacketCommand:
    return codec.decode(code)


def code_bits(code: int) -> tuple[int, int, int]:
    """MSB-first bits of a 3-bit code."""
    return ((code >> 2) & 1, (code >> 1) & 1, code & 1)


def bits_code(bits: Iterable[int]) -> int:
    code = 0
    for b in bits:
        code = (code << 1) | (1 if b else 0)
    return code


class TagKind(enum.Enum):
    HEADER = "header"
    FOOTER = "footer"


@dataclass(frozen=True)
class TagFrame:
    kind: TagKind
    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) != 4:
            raise ValueError("tag frames are 4 bits")
        if self.kind is TagKind.HEADER and self.bits[0] != HIGH:
            raise ValueError("header must start with a HIGH bit")
        if self.kind is TagKind.FOOTER and self.bits != FOOTER:
            raise ValueError("footer must be all LOW")

    def __str__(self):
        return "".join(str(b) for b in self.bits)


def frame_header(cmd: PacketCommand, codec: CommandCodec = DEFAULT_CODEC) -> TagFrame:
    return TagFrame(TagKind.HEADER, (HIGH,) + code_bits(codec.encode(cmd)))


def frame_footer() -> TagFrame:
    return TagFrame(TagKind.FOOTER, FOOTER)


class FooterDetector:
    """Counts consecutive LOW bit-slot samples; fires on every fourth one.

    A stuck-LOW line therefore produces a footer event every four slots.
    """

    def __init__(self, run_length: int = FOOTER_BITS):
        self.run_length = run_length
        self.count = 0

    def push(self, bit: int) -> bool:
        if bit:
            self.count = 0
            return False
        self.count += 1
        if self.count == self.run_length:
            self.count = 0
            return True
        return False

    def reset(self):
        self.count = 0


def detect_footers(samples: Iterable[int], run_length: int = FOOTER_BITS) -> Iterator[int]:
    """Yield the index of every sample at which a footer end is recognised."""
    det = FooterDetector(run_length)
    for k, bit in enumerate(samples):
        if det.push(bit):
            yield k


class BitSampler:
    """Ideal reading circuit.

    Consumes the line level once per simulation step and returns a bit at the
    midpoint of every bit slot. The slot grid is re-anchored on every edge of
    the line; tag bits always change on slot boundaries, so re-anchoring keeps
    the grid aligned with the transmitter. Before the first edge nothing is
    sampled.
    """

    def __init__(self, samples_per_bit: int):
        if samples_per_bit < 1:
            raise ValueError("samples_per_bit must be >= 1")
        self.samples_per_bit = samples_per_bit
        self._mid = samples_per_bit // 2
        self._prev = LOW
        self._count = -1

    def push(self, level: int) -> int | None:
        if level != self._prev:
            self._prev = level
            self._count = 0
        elif self._count >= 0:
            self._count += 1
        else:
            return None
        if self._count % self.samples_per_bit == self._mid:
            return level
        return None


class BitFlipChannel:
    """Flips each sampled bit independently with probability ``p`` (seeded)."""

    def __init__(self, p: float = 0.0, seed: int | None = 0):
        if not 0.0 <= p <= 1.0:
            raise ValueError("flip probability must be in [0, 1]")
        self.p = p
        self._rng = random.Random(seed)
        self.flips = 0

    def apply(self, bit: int) -> int:
        if self.p and self._rng.random() < self.p:
            self.flips += 1
            return bit ^ 1
        return bit


def samples_per_bit(t_bit: float, dt: float) -> int:
    """Number of simulation steps per bit slot; ``t_bit`` must be a multiple of ``dt``."""
    n = round(t_bit / dt)
    if n < 1 or abs(n * dt - t_bit) > 1e-9 * t_bit:
        raise ValueError(f"t_bit={t_bit} is not an integer multiple of dt={dt}")
    return n
