"""FDX-B tag identity, frame codec, pass simulation and visit matching.

Frame layout (normative, see docs/fdxb_frame.md): 128 bits, transmitted
bit 0 first. Bits 0..10 are the header ``10000000000``; thirteen groups
follow, each 8 payload bits (LSB first within the payload byte) plus a
``1`` stuffing bit. The 13 payload bytes are: a 64-bit identification
block (little endian: 38-bit national id, 10-bit country code, data-block
flag, 14 reserved bits, animal flag), a CRC-16 over those 8 bytes
(poly 0x1021 reflected, init 0x0000, little endian), and a 24-bit
trailing data block. Hex form packs frame bits MSB first per byte.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

from feedstation.core import crc16_kermit

FRAME_BITS = 128
FRAME_BYTES = 16
HEADER = (1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0)
PAYLOAD_BYTES = 13
MATCH_WINDOW_MS = 5000

_TAG_RE = re.compile(r"^(\d{1,4})_(\d{1,12})$")


class FdxbError(Exception):
    """Base for frame decode failures; the scanner keeps listening."""


class HeaderError(FdxbError):
    pass


class FramingError(FdxbError):
    """A stuffing bit slot did not carry a 1."""


class CrcError(FdxbError):
    pass


class RangeError(ValueError):
    """Tag field outside its ISO-range."""


@dataclass(frozen=True, order=True)
class TagId:
    """FDX-B identity: 10-bit country code plus 38-bit national id."""

    country_code: int
    national_id: int

    def __post_init__(self) -> None:
        if not 0 <= self.country_code <= 0x3FF:
            raise RangeError(f"country_code {self.country_code} outside 0..1023")
        if not 0 <= self.national_id < (1 << 38):
            raise RangeError(f"national_id {self.national_id} outside 0..2^38-1")

    def __str__(self) -> str:
        return f"{self.country_code:03d}_{self.national_id:012d}"

    @classmethod
    def parse(cls, text: str) -> "TagId":
        m = _TAG_RE.match(text.strip())
        if not m:
            raise RangeError(f"not a CCC_NNNNNNNNNNNN tag: {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))


@dataclass(frozen=True)
class RfidDetection:
    tag: TagId
    ts: int  # milliseconds, station clock
    station_id: int = 0

    def to_line(self) -> str:
        return f"{self.ts},{self.tag.country_code},{self.tag.national_id}"

    @classmethod
    def from_line(cls, line: str, station_id: int = 0) -> "RfidDetection":
        ts, country, national = line.strip().split(",")
        return cls(TagId(int(country), int(national)), int(ts), station_id)


@dataclass(frozen=True)
class DecodedFrame:
    tag: TagId
    animal: bool
    data_block: bool
    trailing: int = 0


@dataclass(frozen=True)
class FdxbFrame:
    """Raw 128-bit frame, stored as 16 bytes, frame bit 0 = MSB of byte 0."""

    data: bytes

    def __post_init__(self) -> None:
        if len(self.data) != FRAME_BYTES:
            raise RangeError(f"frame must be {FRAME_BYTES} bytes, got {len(self.data)}")

    def bit(self, i: int) -> int:
        return (self.data[i >> 3] >> (7 - (i & 7))) & 1

    def to_hex(self) -> str:
        return self.data.hex()

    @classmethod
    def from_hex(cls, text: str) -> "FdxbFrame":
        return cls(bytes.fromhex(text.strip()))

    @classmethod
    def from_bits(cls, bits) -> "FdxbFrame":
        if len(bits) != FRAME_BITS:
            raise RangeError(f"frame must be {FRAME_BITS} bits, got {len(bits)}")
        out = bytearray(FRAME_BYTES)
        for i, b in enumerate(bits):
            if b:
                out[i >> 3] |= 1 << (7 - (i & 7))
        return cls(bytes(out))


def _id_block(tag: TagId, animal: bool, data_block: bool) -> int:
    block = tag.national_id
    block |= tag.country_code << 38
    block |= int(data_block) << 48
    block |= int(animal) << 63
    return block


def encode_frame(tag: TagId, animal: bool = True, data_block: bool = False,
                 trailing: int = 0) -> FdxbFrame:
    """Build a frame that decode_frame inverts. Test-vector generator and
    the simulator's transmit path."""
    if not 0 <= trailing < (1 << 24):
        raise RangeError(f"trailing data {trailing} outside 24 bits")
    ident = _id_block(tag, animal, data_block).to_bytes(8, "little")
    crc = crc16_kermit(ident).to_bytes(2, "little")
    payload = ident + crc + trailing.to_bytes(3, "little")
    bits = list(HEADER)
    for byte in payload:
        bits.extend((byte >> k) & 1 for k in range(8))  # LSB first
        bits.append(1)  # stuffing bit
    return FdxbFrame.from_bits(bits)


def decode_frame(frame: FdxbFrame) -> DecodedFrame:
    """Extract identity and flags; raises HeaderError, FramingError or
    CrcError (all recoverable read failures)."""
    for i, expect in enumerate(HEADER):
        if frame.bit(i) != expect:
            raise HeaderError(f"header bit {i} is {frame.bit(i)}, expected {expect}")
    payload = bytearray()
    pos = len(HEADER)
    for _ in range(PAYLOAD_BYTES):
        byte = 0
        for k in range(8):
            byte |= frame.bit(pos + k) << k
        pos += 8
        if frame.bit(pos) != 1:
            raise FramingError(f"stuffing bit at {pos} is 0")
        pos += 1
        payload.append(byte)
    ident = bytes(payload[:8])
    crc = int.from_bytes(payload[8:10], "little")
    if crc != crc16_kermit(ident):
        raise CrcError(f"crc 0x{crc:04x} != 0x{crc16_kermit(ident):04x}")
    block = int.from_bytes(ident, "little")
    tag = TagId((block >> 38) & 0x3FF, block & ((1 << 38) - 1))
    return DecodedFrame(
        tag=tag,
        animal=bool(block >> 63),
        data_block=bool((block >> 48) & 1),
        trailing=int.from_bytes(payload[10:13], "little"),
    )


@lru_cache(maxsize=4096)
def _air_roundtrip(tag: TagId) -> TagId:
    # What the reader hands back after demodulating this tag's frame.
    return decode_frame(encode_frame(tag)).tag


def simulate_pass(tag: TagId, p_detect: float, rng, ts: int = 0,
                  station_id: int = 0) -> RfidDetection | None:
    """One tube transit: Bernoulli(p_detect) read through the frame codec."""
    if not 0.0 <= p_detect <= 1.0:
        raise ValueError(f"p_detect {p_detect} outside [0, 1]")
    if rng.random() >= p_detect:
        return None
    return RfidDetection(_air_roundtrip(tag), ts, station_id)


@dataclass
class MatchResult:
    tag: TagId | None
    detection: RfidDetection | None
    ambiguous: bool = False


def match_detections(visit, detections: list[RfidDetection],
                     consumed: set[int] | None = None,
                     window_ms: int = MATCH_WINDOW_MS) -> MatchResult:
    """Pick the detection nearest the visit's entry or exit timestamp.

    ``visit`` needs ``entry_ts``/``exit_ts`` in ms. ``consumed`` holds
    indices into ``detections`` already claimed by other visits; the chosen
    index is added to it. Ties between distinct tags prefer the detection
    nearest the entrance and flag the visit ambiguous.
    """
    best: tuple[int, int, int] | None = None  # (score, entry_dist, index)
    tie_other_tag = False
    for i, det in enumerate(detections):
        if consumed is not None and i in consumed:
            continue
        entry_dist = abs(det.ts - visit.entry_ts)
        exit_dist = abs(det.ts - visit.exit_ts)
        score = min(entry_dist, exit_dist)
        if score > window_ms:
            continue
        key = (score, entry_dist, i)
        if best is None or key < best:
            if best is not None and key[0] == best[0]:
                prev = detections[best[2]]
                tie_other_tag = prev.tag != det.tag
            best = key
        elif key[0] == best[0] and detections[best[2]].tag != det.tag:
            tie_other_tag = True
    if best is None:
        return MatchResult(None, None)
    chosen = detections[best[2]]
    if consumed is not None:
        consumed.add(best[2])
    return MatchResult(chosen.tag, chosen, ambiguous=tie_other_tag)


def assign_tags(visits, detections: list[RfidDetection],
                window_ms: int = MATCH_WINDOW_MS) -> list[MatchResult]:
    """Match a batch of visits (ordered by entry) without double-spending
    any detection."""
    consumed: set[int] = set()
    ordered = sorted(range(len(visits)), key=lambda i: visits[i].entry_ts)
    results: list[MatchResult] = [MatchResult(None, None)] * len(visits)
    for i in ordered:
        results[i] = match_detections(visits[i], detections, consumed, window_ms)
    return results
