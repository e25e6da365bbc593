"""Bit-exact wire codec for the station's uplinks and the trap-update downlink.

Layout contract (normative, see docs/wire_format.md): every payload starts
with a type nibble and a version nibble, then fields are packed MSB-first
(big endian at the bit level) with zero padding up to a byte boundary.
Scaled integer fields: temperatures in 0.1 degC steps offset -40 degC,
humidity in 0.1 % steps, weights in 0.1 g steps, times as 32-bit unix
seconds. All payloads fit the 51-byte radio budget.
"""

from __future__ import annotations

from dataclasses import dataclass

from feedstation.rfid import TagId

CODEC_VERSION = 1
MAX_PAYLOAD_BYTES = 51

TYPE_SYSTEM_UPDATE = 0x1
TYPE_ANIMAL_UPDATE = 0x2
TYPE_DB_SYNC_REQUEST = 0x3
TYPE_TRAP_EVENT = 0x4
TYPE_TRAP_UPDATE = 0x8

# Fixed encoded sizes in bytes (TrapUpdate varies with its op count).
SYSTEM_UPDATE_BYTES = 15
ANIMAL_UPDATE_BYTES = 21
DB_SYNC_REQUEST_BYTES = 7
TRAP_EVENT_BYTES = 14

_TRAP_UPDATE_HEADER_BITS = 54  # type+ver+server_time+flags+reserved+op_count
_TRAP_OP_BITS = 49  # kind bit + 10-bit country + 38-bit national id

# Largest op count that keeps a TrapUpdate inside MAX_PAYLOAD_BYTES.
MAX_TRAP_OPS = (MAX_PAYLOAD_BYTES * 8 - _TRAP_UPDATE_HEADER_BITS) // _TRAP_OP_BITS

# SystemUpdate error_flags bit assignments.
FLAG_SCALE_FAULT = 0x0001
FLAG_RFID_FAULT = 0x0002
FLAG_DOOR_FAULT = 0x0004
FLAG_HUMIDITY_WARNING = 0x0008
FLAG_QUEUE_PARKED = 0x0010


class CodecError(Exception):
    """Base for all codec failures."""


class RangeError(CodecError):
    """A field value does not fit its wire representation."""


class UnknownTypeError(CodecError):
    """Type nibble does not name a known message."""


class VersionError(CodecError):
    """Codec version nibble mismatch."""


class TruncationError(CodecError):
    """Payload ends before the layout is complete."""


class LengthError(CodecError):
    """Payload carries bytes beyond the layout."""


@dataclass(frozen=True)
class SystemUpdate:
    """Periodic status uplink. Raw fields are the wire integers."""

    seq: int
    ts: int
    temp_in_raw: int
    temp_out_raw: int
    rh_in_raw: int
    rh_out_raw: int
    error_flags: int = 0

    @classmethod
    def from_readings(cls, seq: int, ts: int, temp_in_c: float, temp_out_c: float,
                      rh_in_pct: float, rh_out_pct: float, error_flags: int = 0) -> "SystemUpdate":
        return cls(
            seq=seq,
            ts=ts,
            temp_in_raw=_quantize_temp("temp_in", temp_in_c),
            temp_out_raw=_quantize_temp("temp_out", temp_out_c),
            rh_in_raw=_quantize_rh("rh_in", rh_in_pct),
            rh_out_raw=_quantize_rh("rh_out", rh_out_pct),
            error_flags=error_flags,
        )

    @property
    def temp_in_c(self) -> float:
        return self.temp_in_raw / 10.0 - 40.0

    @property
    def temp_out_c(self) -> float:
        return self.temp_out_raw / 10.0 - 40.0

    @property
    def rh_in_pct(self) -> float:
        return self.rh_in_raw / 10.0

    @property
    def rh_out_pct(self) -> float:
        return self.rh_out_raw / 10.0


@dataclass(frozen=True)
class AnimalUpdate:
    """One completed visit: identity (optional), timing and weight."""

    seq: int
    tag: TagId | None
    entry_ts: int
    exit_ts: int
    weight_raw: int
    std_raw: int

    @classmethod
    def from_measurement(cls, seq: int, tag: TagId | None, entry_ts: int, exit_ts: int,
                         weight_grams: float, std_grams: float) -> "AnimalUpdate":
        weight_raw = int(round(weight_grams * 10))
        if not 0 <= weight_raw <= 0xFFFF:
            raise RangeError(f"weight: {weight_grams} g exceeds 16-bit 0.1 g field")
        # Quality std saturates instead of failing: a terrible measurement
        # is still worth reporting.
        std_raw = min(max(int(round(std_grams * 10)), 0), 0x3FF)
        return cls(seq=seq, tag=tag, entry_ts=entry_ts, exit_ts=exit_ts,
                   weight_raw=weight_raw, std_raw=std_raw)

    @property
    def weight_grams(self) -> float:
        return self.weight_raw / 10.0

    @property
    def std_grams(self) -> float:
        return self.std_raw / 10.0


@dataclass(frozen=True)
class DbSyncRequest:
    """Asks the server for trap-database changes after ``last_updated``."""

    seq: int
    last_updated: int


@dataclass(frozen=True)
class TrapEvent:
    """A trap fired; ``tag`` is absent for master-rule captures."""

    seq: int
    ts: int
    tag: TagId | None


@dataclass(frozen=True)
class TrapUpdate:
    """Downlink delta for the station trap database.

    ``master`` is tri-state: None means "flag not included, keep yours".
    """

    server_time: int
    master: bool | None
    ops: tuple[tuple[str, TagId], ...]
    more_follows: bool = False


Uplink = SystemUpdate | AnimalUpdate | DbSyncRequest | TrapEvent
Message = Uplink | TrapUpdate


def _quantize_temp(name: str, celsius: float) -> int:
    raw = int(round((celsius + 40.0) * 10))
    if not 0 <= raw <= 0xFFF:
        raise RangeError(f"{name}: {celsius} degC outside -40.0..369.5")
    return raw


def _quantize_rh(name: str, pct: float) -> int:
    raw = int(round(pct * 10))
    if not 0 <= raw <= 0x3FF:
        raise RangeError(f"{name}: {pct} % outside 0..102.3")
    return raw


class _BitWriter:
    def __init__(self) -> None:
        self._acc = 0
        self._nbits = 0

    def write(self, name: str, value: int, nbits: int) -> None:
        if not isinstance(value, int) or not 0 <= value < (1 << nbits):
            raise RangeError(f"{name}: {value!r} does not fit {nbits} bits")
        self._acc = (self._acc << nbits) | value
        self._nbits += nbits

    def payload(self) -> bytes:
        pad = (-self._nbits) % 8
        return ((self._acc << pad)).to_bytes((self._nbits + pad) // 8, "big")


class _BitReader:
    def __init__(self, payload: bytes) -> None:
        self._value = int.from_bytes(payload, "big")
        self._total = len(payload) * 8
        self._pos = 0

    def read(self, nbits: int) -> int:
        if self._pos + nbits > self._total:
            raise TruncationError(
                f"payload ends at bit {self._total}, needed {self._pos + nbits}")
        self._pos += nbits
        return (self._value >> (self._total - self._pos)) & ((1 << nbits) - 1)


def _write_tag(w: _BitWriter, tag: TagId | None) -> None:
    if tag is None:
        w.write("tag_present", 0, 1)
        w.write("tag", 0, 48)
    else:
        w.write("tag_present", 1, 1)
        w.write("country_code", tag.country_code, 10)
        w.write("national_id", tag.national_id, 38)


def _read_tag(r: _BitReader) -> TagId | None:
    present = r.read(1)
    country = r.read(10)
    national = r.read(38)
    return TagId(country, national) if present else None


def encode(msg: Message) -> bytes:
    """Serialize a message to its wire payload. Deterministic; raises
    RangeError naming the first offending field."""
    w = _BitWriter()
    if isinstance(msg, SystemUpdate):
        w.write("type", TYPE_SYSTEM_UPDATE, 4)
        w.write("version", CODEC_VERSION, 4)
        w.write("seq", msg.seq, 16)
        w.write("ts", msg.ts, 32)
        w.write("temp_in", msg.temp_in_raw, 12)
        w.write("temp_out", msg.temp_out_raw, 12)
        w.write("rh_in", msg.rh_in_raw, 10)
        w.write("rh_out", msg.rh_out_raw, 10)
        w.write("error_flags", msg.error_flags, 16)
    elif isinstance(msg, AnimalUpdate):
        w.write("type", TYPE_ANIMAL_UPDATE, 4)
        w.write("version", CODEC_VERSION, 4)
        w.write("seq", msg.seq, 16)
        _write_tag(w, msg.tag)
        w.write("entry_ts", msg.entry_ts, 32)
        w.write("exit_ts", msg.exit_ts, 32)
        w.write("weight", msg.weight_raw, 16)
        w.write("std", msg.std_raw, 10)
    elif isinstance(msg, DbSyncRequest):
        w.write("type", TYPE_DB_SYNC_REQUEST, 4)
        w.write("version", CODEC_VERSION, 4)
        w.write("seq", msg.seq, 16)
        w.write("last_updated", msg.last_updated, 32)
    elif isinstance(msg, TrapEvent):
        w.write("type", TYPE_TRAP_EVENT, 4)
        w.write("version", CODEC_VERSION, 4)
        w.write("seq", msg.seq, 16)
        w.write("ts", msg.ts, 32)
        _write_tag(w, msg.tag)
    elif isinstance(msg, TrapUpdate):
        if len(msg.ops) > MAX_TRAP_OPS:
            raise RangeError(
                f"ops: {len(msg.ops)} exceeds {MAX_TRAP_OPS} per downlink, "
                "split across chained updates")
        w.write("type", TYPE_TRAP_UPDATE, 4)
        w.write("version", CODEC_VERSION, 4)
        w.write("server_time", msg.server_time, 32)
        w.write("more_follows", int(msg.more_follows), 1)
        w.write("master_valid", int(msg.master is not None), 1)
        w.write("master", int(bool(msg.master)), 1)
        w.write("reserved", 0, 3)
        w.write("op_count", len(msg.ops), 8)
        for kind, tag in msg.ops:
            if kind not in ("add", "remove"):
                raise RangeError(f"op kind: {kind!r} is not add/remove")
            w.write("op_kind", 0 if kind == "add" else 1, 1)
            w.write("country_code", tag.country_code, 10)
            w.write("national_id", tag.national_id, 38)
    else:
        raise TypeError(f"not a codec message: {type(msg).__name__}")
    payload = w.payload()
    assert len(payload) <= MAX_PAYLOAD_BYTES
    return payload


def payload_size(msg: Message) -> int:
    """Encoded size in bytes, computed from the layout (no serialization)."""
    if isinstance(msg, SystemUpdate):
        return SYSTEM_UPDATE_BYTES
    if isinstance(msg, AnimalUpdate):
        return ANIMAL_UPDATE_BYTES
    if isinstance(msg, DbSyncRequest):
        return DB_SYNC_REQUEST_BYTES
    if isinstance(msg, TrapEvent):
        return TRAP_EVENT_BYTES
    if isinstance(msg, TrapUpdate):
        return (_TRAP_UPDATE_HEADER_BITS + _TRAP_OP_BITS * len(msg.ops) + 7) // 8
    raise TypeError(f"not a codec message: {type(msg).__name__}")


def decode(payload: bytes) -> Message:
    """Parse a payload. Total: any input yields a message or a CodecError."""
    if len(payload) == 0:
        raise TruncationError("empty payload")
    msg_type = payload[0] >> 4
    version = payload[0] & 0x0F
    if msg_type not in _DECODERS:
        raise UnknownTypeError(f"type nibble 0x{msg_type:x}")
    if version != CODEC_VERSION:
        raise VersionError(f"version nibble {version}, expected {CODEC_VERSION}")
    return _DECODERS[msg_type](payload)


def _expect_length(payload: bytes, expected: int) -> None:
    if len(payload) < expected:
        raise TruncationError(f"{len(payload)} bytes, layout needs {expected}")
    if len(payload) > expected:
        raise LengthError(f"{len(payload)} bytes, layout is {expected}")


def _decode_system_update(payload: bytes) -> SystemUpdate:
    _expect_length(payload, SYSTEM_UPDATE_BYTES)
    r = _BitReader(payload)
    r.read(8)
    return SystemUpdate(
        seq=r.read(16), ts=r.read(32),
        temp_in_raw=r.read(12), temp_out_raw=r.read(12),
        rh_in_raw=r.read(10), rh_out_raw=r.read(10),
        error_flags=r.read(16),
    )


def _decode_animal_update(payload: bytes) -> AnimalUpdate:
    _expect_length(payload, ANIMAL_UPDATE_BYTES)
    r = _BitReader(payload)
    r.read(8)
    seq = r.read(16)
    tag = _read_tag(r)
    return AnimalUpdate(
        seq=seq, tag=tag, entry_ts=r.read(32), exit_ts=r.read(32),
        weight_raw=r.read(16), std_raw=r.read(10),
    )


def _decode_db_sync(payload: bytes) -> DbSyncRequest:
    _expect_length(payload, DB_SYNC_REQUEST_BYTES)
    r = _BitReader(payload)
    r.read(8)
    return DbSyncRequest(seq=r.read(16), last_updated=r.read(32))


def _decode_trap_event(payload: bytes) -> TrapEvent:
    _expect_length(payload, TRAP_EVENT_BYTES)
    r = _BitReader(payload)
    r.read(8)
    return TrapEvent(seq=r.read(16), ts=r.read(32), tag=_read_tag(r))


def _decode_trap_update(payload: bytes) -> TrapUpdate:
    if len(payload) < 7:
        raise TruncationError(f"{len(payload)} bytes, TrapUpdate header needs 7")
    r = _BitReader(payload)
    r.read(8)
    server_time = r.read(32)
    more_follows = bool(r.read(1))
    master_valid = bool(r.read(1))
    master_bit = bool(r.read(1))
    r.read(3)
    op_count = r.read(8)
    if op_count > MAX_TRAP_OPS:
        raise RangeError(f"op_count: {op_count} exceeds {MAX_TRAP_OPS}")
    _expect_length(payload, (_TRAP_UPDATE_HEADER_BITS + _TRAP_OP_BITS * op_count + 7) // 8)
    ops = []
    for _ in range(op_count):
        kind = "remove" if r.read(1) else "add"
        country = r.read(10)
        national = r.read(38)
        ops.append((kind, TagId(country, national)))
    return TrapUpdate(server_time=server_time,
                      master=master_bit if master_valid else None,
                      ops=tuple(ops), more_follows=more_follows)


_DECODERS = {
    TYPE_SYSTEM_UPDATE: _decode_system_update,
    TYPE_ANIMAL_UPDATE: _decode_animal_update,
    TYPE_DB_SYNC_REQUEST: _decode_db_sync,
    TYPE_TRAP_EVENT: _decode_trap_event,
    TYPE_TRAP_UPDATE: _decode_trap_update,
}
