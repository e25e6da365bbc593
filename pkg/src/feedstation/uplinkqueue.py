"""Persistent store-and-forward uplink queue with confirmed-delivery
retransmission. The station's reliability layer.

Log file format (normative, see docs/queue_log.md): little-endian records
``kind:u8 seq:u16 len:u16 payload[len] crc:u16`` where the CRC (poly
0x1021 reflected, init 0) covers kind..payload. Kinds: 1 enqueue,
2 confirm, 3 park. A torn tail record is dropped on load; startup
compaction rewrites the log with only live entries.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field
from enum import Enum

from feedstation.core import crc16_kermit

log = logging.getLogger(__name__)

MAX_PAYLOAD = 51
SEQ_MOD = 1 << 16

_REC_ENQUEUE = 1
_REC_CONFIRM = 2
_REC_PARK = 3
_HEADER = struct.Struct("<BHH")
_CRC = struct.Struct("<H")


class EntryState(Enum):
    PENDING = "pending"
    IN_FLIGHT = "in_flight"
    CONFIRMED = "confirmed"
    PARKED = "parked"


@dataclass
class QueueEntry:
    seq: int
    payload: bytes
    enqueued_ts: int = 0
    attempts: int = 0
    state: EntryState = EntryState.PENDING


@dataclass(frozen=True)
class LinkModel:
    """Lossy-link parameters: the drop probability applies independently to
    an uplink and to its confirmation (set confirm_drop_probability to
    override the confirmation side)."""

    drop_probability: float = 0.0
    confirm_drop_probability: float | None = None
    latency_ms: int = 1000
    duty_cycle_gap_ms: int = 2000

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability outside [0, 1]")
        if self.confirm_drop_probability is not None \
                and not 0.0 <= self.confirm_drop_probability <= 1.0:
            raise ValueError("confirm_drop_probability outside [0, 1]")
        if self.duty_cycle_gap_ms < 0 or self.latency_ms < 0:
            raise ValueError("negative link timing")

    @property
    def confirm_drop(self) -> float:
        if self.confirm_drop_probability is None:
            return self.drop_probability
        return self.confirm_drop_probability


@dataclass(frozen=True)
class Transmission:
    seq: int
    payload: bytes
    attempt: int
    ts: int


@dataclass
class QueueMetrics:
    enqueued: int = 0
    transmissions: int = 0
    confirmed: int = 0
    parked: int = 0
    unknown_confirms: int = 0
    dropped_records: int = 0


class QueueStorageError(Exception):
    """Fatal: the persistent log cannot be written."""


class UplinkQueue:
    """Single-consumer FIFO with head-of-line retransmission.

    Confirm timeout starts at ``timeout_ms`` and doubles per attempt up to
    ``backoff_cap_ms``. ``max_attempts=None`` retries forever; a bounded
    queue parks exhausted entries and raises the queue error flag.
    """

    def __init__(self, path: str | None = None, max_attempts: int | None = None,
                 timeout_ms: int = 5000, backoff_cap_ms: int = 80_000,
                 duty_cycle_gap_ms: int = 0) -> None:
        self.path = path
        self.max_attempts = max_attempts
        self.timeout_ms = timeout_ms
        self.backoff_cap_ms = backoff_cap_ms
        self.duty_cycle_gap_ms = duty_cycle_gap_ms
        self.metrics = QueueMetrics()
        self.error_flag = False
        self._entries: dict[int, QueueEntry] = {}  # live, insertion ordered
        self._next_seq = 0
        self._in_flight: int | None = None
        self._deadline = 0
        self._last_tx: int | None = None
        self._file = None
        if path is not None:
            self._load_and_compact()

    # -- persistence -----------------------------------------------------

    def _load_and_compact(self) -> None:
        entries: dict[int, QueueEntry] = {}
        max_seq = -1
        if os.path.exists(self.path):
            with open(self.path, "rb") as f:
                raw = f.read()
            pos = 0
            while pos < len(raw):
                if pos + _HEADER.size > len(raw):
                    self.metrics.dropped_records += 1
                    break
                kind, seq, length = _HEADER.unpack_from(raw, pos)
                end = pos + _HEADER.size + length + _CRC.size
                if end > len(raw):
                    self.metrics.dropped_records += 1
                    break
                body = raw[pos:pos + _HEADER.size + length]
                (crc,) = _CRC.unpack_from(raw, pos + _HEADER.size + length)
                if crc != crc16_kermit(body):
                    self.metrics.dropped_records += 1
                    break  # torn tail; nothing after it is trustworthy
                payload = raw[pos + _HEADER.size:pos + _HEADER.size + length]
                if kind == _REC_ENQUEUE:
                    entries[seq] = QueueEntry(seq, payload)
                elif kind in (_REC_CONFIRM, _REC_PARK):
                    entries.pop(seq, None)
                max_seq = max(max_seq, seq)
                pos = end
        self._entries = entries
        self._next_seq = (max_seq + 1) % SEQ_MOD
        tmp = self.path + ".compact"
        try:
            with open(tmp, "wb") as f:
                for e in entries.values():
                    f.write(self._record(_REC_ENQUEUE, e.seq, e.payload))
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, self.path)
            self._file = open(self.path, "ab")
        except OSError as exc:
            raise QueueStorageError(str(exc)) from exc

    @staticmethod
    def _record(kind: int, seq: int, payload: bytes = b"") -> bytes:
        body = _HEADER.pack(kind, seq, len(payload)) + payload
        return body + _CRC.pack(crc16_kermit(body))

    def _append(self, kind: int, seq: int, payload: bytes = b"") -> None:
        if self._file is None:
            return
        try:
            self._file.write(self._record(kind, seq, payload))
            self._file.flush()
        except OSError as exc:
            raise QueueStorageError(str(exc)) from exc

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    # -- operations ------------------------------------------------------

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def depth(self) -> int:
        return len(self._entries)

    def enqueue(self, payload: bytes, now: int = 0) -> int:
        """Durably stores the payload; returns its sequence number."""
        if len(payload) > MAX_PAYLOAD:
            raise ValueError(f"payload {len(payload)} bytes exceeds {MAX_PAYLOAD}")
        seq = self._next_seq
        self._next_seq = (self._next_seq + 1) % SEQ_MOD
        self._append(_REC_ENQUEUE, seq, payload)
        self._entries[seq] = QueueEntry(seq, payload, enqueued_ts=now)
        self.metrics.enqueued += 1
        return seq

    def confirm(self, seq: int) -> None:
        entry = self._entries.get(seq)
        if entry is None:
            self.metrics.unknown_confirms += 1
            return
        self._append(_REC_CONFIRM, seq)
        entry.state = EntryState.CONFIRMED
        del self._entries[seq]
        self.metrics.confirmed += 1
        if self._in_flight == seq:
            self._in_flight = None

    def pump(self, now: int) -> list[Transmission]:
        """Advance the retransmission machinery to ``now``; returns the
        transmissions the radio should send."""
        out: list[Transmission] = []
        if self._in_flight is not None:
            entry = self._entries.get(self._in_flight)
            if entry is None:
                self._in_flight = None
            elif now >= self._deadline:
                if self.max_attempts is not None and entry.attempts >= self.max_attempts:
                    self._park(entry)
                else:
                    entry.state = EntryState.PENDING
                    self._in_flight = None
        if self._in_flight is None:
            head = next(iter(self._entries.values()), None)
            if head is not None and self._tx_allowed(now):
                head.attempts += 1
                head.state = EntryState.IN_FLIGHT
                self._in_flight = head.seq
                self._last_tx = now
                self._deadline = now + self._backoff(head.attempts)
                self.metrics.transmissions += 1
                out.append(Transmission(head.seq, head.payload, head.attempts, now))
        return out

    def next_wakeup(self, now: int) -> int | None:
        """Next time pump() could do something, or None when drained."""
        if not self._entries:
            return None
        if self._in_flight is not None:
            return self._deadline
        if self._last_tx is None:
            return now
        return max(now, self._last_tx + self.duty_cycle_gap_ms)

    def _tx_allowed(self, now: int) -> bool:
        return self._last_tx is None or now >= self._last_tx + self.duty_cycle_gap_ms

    def configure_link(self, link: LinkModel) -> None:
        self.duty_cycle_gap_ms = link.duty_cycle_gap_ms

    def _backoff(self, attempt: int) -> int:
        return min(self.timeout_ms * (1 << (attempt - 1)), self.backoff_cap_ms)

    def _park(self, entry: QueueEntry) -> None:
        self._append(_REC_PARK, entry.seq)
        entry.state = EntryState.PARKED
        del self._entries[entry.seq]
        self.metrics.parked += 1
        self.error_flag = True
        if self._in_flight == entry.seq:
            self._in_flight = None

    def pending_seqs(self) -> list[int]:
        return list(self._entries.keys())
