"""Telemetry backend: uplink ingestion with exactly-once visibility,
visit/status/capture persistence, trap-target ledger and downlink deltas.

Storage is an embedded SQLite file (":memory:" works for tests). All wire
quantities are stored as received (0.1 g / 0.1 degC steps, unix seconds);
floats only appear at the query boundary.
"""

from __future__ import annotations

import sqlite3
import threading
import time
from dataclasses import dataclass, field

from feedstation import codec
from feedstation.codec import (AnimalUpdate, DbSyncRequest, SystemUpdate,
                               TrapEvent, TrapUpdate)
from feedstation.rfid import TagId

_SCHEMA = """
CREATE TABLE IF NOT EXISTS uplinks_seen (
    station_id INTEGER NOT NULL,
    seq INTEGER NOT NULL,
    msg_type INTEGER NOT NULL,
    received_ts INTEGER NOT NULL,
    PRIMARY KEY (station_id, seq)
);
CREATE TABLE IF NOT EXISTS visits (
    station_id INTEGER NOT NULL,
    seq INTEGER NOT NULL,
    country INTEGER,
    national INTEGER,
    entry_ts INTEGER NOT NULL,
    exit_ts INTEGER NOT NULL,
    weight_dg INTEGER NOT NULL,
    std_dg INTEGER NOT NULL,
    received_ts INTEGER NOT NULL,
    PRIMARY KEY (station_id, seq)
);
CREATE INDEX IF NOT EXISTS visits_entry ON visits (entry_ts, station_id, seq);
CREATE TABLE IF NOT EXISTS status (
    station_id INTEGER NOT NULL,
    seq INTEGER NOT NULL,
    ts INTEGER NOT NULL,
    temp_in_raw INTEGER NOT NULL,
    temp_out_raw INTEGER NOT NULL,
    rh_in_raw INTEGER NOT NULL,
    rh_out_raw INTEGER NOT NULL,
    error_flags INTEGER NOT NULL,
    received_ts INTEGER NOT NULL,
    PRIMARY KEY (station_id, seq)
);
CREATE TABLE IF NOT EXISTS captures (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    station_id INTEGER NOT NULL,
    seq INTEGER NOT NULL,
    ts INTEGER NOT NULL,
    country INTEGER,
    national INTEGER,
    received_ts INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS quarantine (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    station_id INTEGER NOT NULL,
    payload BLOB NOT NULL,
    error TEXT NOT NULL,
    received_ts INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS trap_ledger (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    station_id INTEGER NOT NULL,
    country INTEGER NOT NULL,
    national INTEGER NOT NULL,
    op TEXT NOT NULL,
    change_ts INTEGER NOT NULL,
    operator TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS ledger_station ON trap_ledger (station_id, change_ts);
CREATE TABLE IF NOT EXISTS master_ledger (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    station_id INTEGER NOT NULL,
    master INTEGER NOT NULL,
    change_ts INTEGER NOT NULL,
    operator TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS station_state (
    station_id INTEGER PRIMARY KEY,
    db_last_updated INTEGER NOT NULL DEFAULT 0,
    last_seen_ts INTEGER NOT NULL DEFAULT 0
);
"""

EXPORT_COLUMNS = "station_id,seq,tag,entry_ts,exit_ts,weight_g,std_g"


@dataclass(frozen=True)
class StoredVisit:
    station_id: int
    seq: int
    tag: TagId | None
    entry_ts: int
    exit_ts: int
    weight_grams: float
    std_grams: float
    received_ts: int

    def export_row(self) -> str:
        tag = str(self.tag) if self.tag else ""
        return (f"{self.station_id},{self.seq},{tag},{self.entry_ts},"
                f"{self.exit_ts},{self.weight_grams:.1f},{self.std_grams:.1f}")


@dataclass(frozen=True)
class VisitFilter:
    station_id: int | None = None
    tag: TagId | None = None
    untagged_only: bool = False
    entry_after: int | None = None
    entry_before: int | None = None
    weight_min_g: float | None = None
    weight_max_g: float | None = None
    max_std_g: float | None = None

    def validate(self) -> None:
        if self.entry_after is not None and self.entry_before is not None \
                and self.entry_after > self.entry_before:
            raise FilterError("entry time range is inverted")
        if self.weight_min_g is not None and self.weight_max_g is not None \
                and self.weight_min_g > self.weight_max_g:
            raise FilterError("weight range is inverted")
        if self.tag is not None and self.untagged_only:
            raise FilterError("tag filter and untagged_only are exclusive")


class FilterError(ValueError):
    pass


@dataclass
class IngestResult:
    ack: bool
    duplicate: bool = False
    message: object | None = None
    downlinks: list[bytes] = field(default_factory=list)
    capture: bool = False


class TelemetryServer:
    """The paper-side backend role: decode, dedup, persist, answer syncs."""

    def __init__(self, db_path: str = ":memory:", clock=None) -> None:
        self._conn = sqlite3.connect(db_path, check_same_thread=False)
        self._conn.executescript(_SCHEMA)
        self._lock = threading.RLock()
        self._clock = clock or (lambda: int(time.time()))

    def close(self) -> None:
        self._conn.close()

    def now(self) -> int:
        return int(self._clock())

    # -- ingestion ---------------------------------------------------------

    def ingest(self, station_id: int, payload: bytes,
               received_ts: int | None = None) -> IngestResult:
        """Decode and persist one uplink; idempotent per (station, seq).
        The ack decision drives the station's confirmed-uplink machinery;
        undecodable payloads are quarantined and the ack withheld."""
        received_ts = self.now() if received_ts is None else received_ts
        try:
            msg = codec.decode(payload)
        except codec.CodecError as exc:
            with self._lock, self._conn:
                self._conn.execute(
                    "INSERT INTO quarantine (station_id, payload, error, received_ts)"
                    " VALUES (?, ?, ?, ?)",
                    (station_id, payload, f"{type(exc).__name__}: {exc}", received_ts))
            return IngestResult(ack=False)
        if isinstance(msg, TrapUpdate):
            # Downlink type arriving on the uplink path is sender confusion.
            with self._lock, self._conn:
                self._conn.execute(
                    "INSERT INTO quarantine (station_id, payload, error, received_ts)"
                    " VALUES (?, ?, ?, ?)",
                    (station_id, payload, "downlink type on uplink path", received_ts))
            return IngestResult(ack=False)

        with self._lock, self._conn:
            cur = self._conn.execute(
                "INSERT OR IGNORE INTO uplinks_seen"
                " (station_id, seq, msg_type, received_ts) VALUES (?, ?, ?, ?)",
                (station_id, msg.seq, _type_nibble(msg), received_ts))
            self._conn.execute(
                "INSERT INTO station_state (station_id, last_seen_ts) VALUES (?, ?)"
                " ON CONFLICT(station_id) DO UPDATE SET last_seen_ts = ?",
                (station_id, received_ts, received_ts))
            if cur.rowcount == 0:
                result = IngestResult(ack=True, duplicate=True, message=msg)
                if isinstance(msg, DbSyncRequest):
                    result.downlinks = self._sync_downlinks(station_id, msg)
                return result
            result = IngestResult(ack=True, message=msg)
            if isinstance(msg, AnimalUpdate):
                tag = msg.tag
                self._conn.execute(
                    "INSERT OR IGNORE INTO visits (station_id, seq, country, national,"
                    " entry_ts, exit_ts, weight_dg, std_dg, received_ts)"
                    " VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                    (station_id, msg.seq,
                     tag.country_code if tag else None,
                     tag.national_id if tag else None,
                     msg.entry_ts, msg.exit_ts, msg.weight_raw, msg.std_raw,
                     received_ts))
            elif isinstance(msg, SystemUpdate):
                self._conn.execute(
                    "INSERT OR IGNORE INTO status (station_id, seq, ts, temp_in_raw,"
                    " temp_out_raw, rh_in_raw, rh_out_raw, error_flags, received_ts)"
                    " VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                    (station_id, msg.seq, msg.ts, msg.temp_in_raw, msg.temp_out_raw,
                     msg.rh_in_raw, msg.rh_out_raw, msg.error_flags, received_ts))
            elif isinstance(msg, TrapEvent):
                tag = msg.tag
                self._conn.execute(
                    "INSERT INTO captures (station_id, seq, ts, country, national,"
                    " received_ts) VALUES (?, ?, ?, ?, ?, ?)",
                    (station_id, msg.seq, msg.ts,
                     tag.country_code if tag else None,
                     tag.national_id if tag else None, received_ts))
                result.capture = True
            elif isinstance(msg, DbSyncRequest):
                result.downlinks = self._sync_downlinks(station_id, msg)
        return result

    def _sync_downlinks(self, station_id: int, msg: DbSyncRequest) -> list[bytes]:
        self._conn.execute(
            "UPDATE station_state SET db_last_updated = ? WHERE station_id = ?",
            (msg.last_updated, station_id))
        return [codec.encode(u) for u in self.trap_delta(station_id, msg.last_updated)]

    # -- trap targets --------------------------------------------------------

    def _next_change_ts(self, station_id: int) -> int:
        row = self._conn.execute(
            "SELECT MAX(ts) FROM (SELECT MAX(change_ts) AS ts FROM trap_ledger"
            " WHERE station_id = ? UNION ALL SELECT MAX(change_ts) FROM master_ledger"
            " WHERE station_id = ?)", (station_id, station_id)).fetchone()
        newest = row[0] or 0
        # Strictly increasing so a delta cut at change_ts never misses edits.
        return max(self.now(), newest + 1)

    def set_trap_targets(self, station_id: int, ops: list[tuple[str, TagId]],
                         operator: str = "operator",
                         master: bool | None = None) -> int:
        """Appends the edit to the ledger; returns its change_ts. An edit
        that changes nothing returns the newest recorded change_ts instead
        of consuming a timestamp (a later real edit must sort after it)."""
        for kind, _tag in ops:
            if kind not in ("add", "remove"):
                raise FilterError(f"op kind {kind!r} is not add/remove")
        with self._lock, self._conn:
            if not ops and master is None:
                return self._next_change_ts(station_id) - 1
            change_ts = self._next_change_ts(station_id)
            for kind, tag in ops:
                self._conn.execute(
                    "INSERT INTO trap_ledger (station_id, country, national, op,"
                    " change_ts, operator) VALUES (?, ?, ?, ?, ?, ?)",
                    (station_id, tag.country_code, tag.national_id, kind,
                     change_ts, operator))
            if master is not None:
                self._conn.execute(
                    "INSERT INTO master_ledger (station_id, master, change_ts,"
                    " operator) VALUES (?, ?, ?, ?)",
                    (station_id, int(master), change_ts, operator))
            return change_ts

    def target_set(self, station_id: int) -> tuple[set[TagId], bool]:
        """Fold the full ledger into the current target set + master flag."""
        with self._lock:
            rows = self._conn.execute(
                "SELECT country, national, op FROM trap_ledger WHERE station_id = ?"
                " ORDER BY change_ts, id", (station_id,)).fetchall()
            targets: set[TagId] = set()
            for country, national, op in rows:
                tag = TagId(country, national)
                if op == "add":
                    targets.add(tag)
                else:
                    targets.discard(tag)
            row = self._conn.execute(
                "SELECT master FROM master_ledger WHERE station_id = ?"
                " ORDER BY change_ts DESC, id DESC LIMIT 1", (station_id,)).fetchone()
            return targets, bool(row[0]) if row else False

    def trap_delta(self, station_id: int, last_updated: int,
                   server_time: int | None = None) -> list[TrapUpdate]:
        """Net changes after ``last_updated``, chunked to the codec budget
        with more-follows chaining. Unknown stations get an empty update.

        The stamped server_time always covers the newest reported change,
        so applying the delta never looks stale against a later resync."""
        server_time = self.now() if server_time is None else server_time
        with self._lock:
            newest = self._conn.execute(
                "SELECT MAX(ts) FROM (SELECT MAX(change_ts) AS ts FROM trap_ledger"
                " WHERE station_id = ? UNION ALL SELECT MAX(change_ts)"
                " FROM master_ledger WHERE station_id = ?)",
                (station_id, station_id)).fetchone()[0]
            server_time = max(server_time, newest or 0)
            touched = self._conn.execute(
                "SELECT DISTINCT country, national FROM trap_ledger"
                " WHERE station_id = ? AND change_ts > ?",
                (station_id, last_updated)).fetchall()
            targets, _ = self.target_set(station_id)
            ops: list[tuple[str, TagId]] = []
            for country, national in sorted(touched):
                tag = TagId(country, national)
                ops.append(("add" if tag in targets else "remove", tag))
            row = self._conn.execute(
                "SELECT master FROM master_ledger WHERE station_id = ?"
                " AND change_ts > ? ORDER BY change_ts DESC, id DESC LIMIT 1",
                (station_id, last_updated)).fetchone()
            master = bool(row[0]) if row else None
        chunks: list[TrapUpdate] = []
        limit = codec.MAX_TRAP_OPS
        groups = [ops[i:i + limit] for i in range(0, len(ops), limit)] or [[]]
        for i, group in enumerate(groups):
            chunks.append(TrapUpdate(server_time=server_time, master=master,
                                     ops=tuple(group),
                                     more_follows=i < len(groups) - 1))
        return chunks

    # -- queries ---------------------------------------------------------

    def _visit_where(self, flt: VisitFilter) -> tuple[str, list]:
        clauses, args = [], []
        if flt.station_id is not None:
            clauses.append("station_id = ?")
            args.append(flt.station_id)
        if flt.tag is not None:
            clauses.append("country = ? AND national = ?")
            args.extend([flt.tag.country_code, flt.tag.national_id])
        if flt.untagged_only:
            clauses.append("country IS NULL")
        if flt.entry_after is not None:
            clauses.append("entry_ts >= ?")
            args.append(flt.entry_after)
        if flt.entry_before is not None:
            clauses.append("entry_ts <= ?")
            args.append(flt.entry_before)
        if flt.weight_min_g is not None:
            clauses.append("weight_dg >= ?")
            args.append(int(round(flt.weight_min_g * 10)))
        if flt.weight_max_g is not None:
            clauses.append("weight_dg <= ?")
            args.append(int(round(flt.weight_max_g * 10)))
        if flt.max_std_g is not None:
            clauses.append("std_dg <= ?")
            args.append(int(round(flt.max_std_g * 10)))
        where = (" WHERE " + " AND ".join(clauses)) if clauses else ""
        return where, args

    @staticmethod
    def _row_to_visit(row) -> StoredVisit:
        station_id, seq, country, national, entry, exit_, wdg, sdg, recv = row
        tag = TagId(country, national) if country is not None else None
        return StoredVisit(station_id, seq, tag, entry, exit_,
                           wdg / 10.0, sdg / 10.0, recv)

    def query_visits(self, flt: VisitFilter | None = None, limit: int = 100,
                     cursor: str | None = None) -> tuple[list[StoredVisit], str | None]:
        """Stable (entry_ts, station_id, seq) ordering with a keyset cursor."""
        flt = flt or VisitFilter()
        flt.validate()
        where, args = self._visit_where(flt)
        if cursor:
            try:
                c_entry, c_station, c_seq = (int(x) for x in cursor.split(":"))
            except ValueError as exc:
                raise FilterError(f"bad cursor {cursor!r}") from exc
            where += (" AND " if where else " WHERE ") + \
                "(entry_ts, station_id, seq) > (?, ?, ?)"
            args.extend([c_entry, c_station, c_seq])
        sql = ("SELECT station_id, seq, country, national, entry_ts, exit_ts,"
               f" weight_dg, std_dg, received_ts FROM visits{where}"
               " ORDER BY entry_ts, station_id, seq LIMIT ?")
        with self._lock:
            rows = self._conn.execute(sql, args + [limit + 1]).fetchall()
        visits = [self._row_to_visit(r) for r in rows[:limit]]
        next_cursor = None
        if len(rows) > limit and visits:
            last = visits[-1]
            next_cursor = f"{last.entry_ts}:{last.station_id}:{last.seq}"
        return visits, next_cursor

    def export_csv(self, flt: VisitFilter | None = None, chunk: int = 500):
        """Streaming CSV export; yields lines, never buffering the table."""
        yield EXPORT_COLUMNS + "\n"
        cursor = None
        while True:
            visits, cursor = self.query_visits(flt, limit=chunk, cursor=cursor)
            for v in visits:
                yield v.export_row() + "\n"
            if cursor is None:
                return

    def station_status(self) -> list[dict]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT s.station_id, s.ts, s.temp_in_raw, s.temp_out_raw,"
                " s.rh_in_raw, s.rh_out_raw, s.error_flags, s.received_ts,"
                " st.db_last_updated, st.last_seen_ts"
                " FROM status s JOIN ("
                "   SELECT station_id, MAX(received_ts) AS m FROM status GROUP BY station_id"
                " ) latest ON s.station_id = latest.station_id AND s.received_ts = latest.m"
                " LEFT JOIN station_state st ON st.station_id = s.station_id"
                " GROUP BY s.station_id").fetchall()
            known = {r[0] for r in rows}
            extra = self._conn.execute(
                "SELECT station_id, db_last_updated, last_seen_ts FROM station_state"
            ).fetchall()
        out = []
        for (sid, ts, ti, to, ri, ro, flags, recv, dblu, seen) in rows:
            out.append({
                "station_id": sid, "ts": ts,
                "temp_in_c": ti / 10.0 - 40.0, "temp_out_c": to / 10.0 - 40.0,
                "rh_in_pct": ri / 10.0, "rh_out_pct": ro / 10.0,
                "error_flags": flags, "received_ts": recv,
                "db_last_updated": dblu or 0, "last_seen_ts": seen or recv,
            })
        for sid, dblu, seen in extra:
            if sid not in known:
                out.append({"station_id": sid, "ts": None, "temp_in_c": None,
                            "temp_out_c": None, "rh_in_pct": None, "rh_out_pct": None,
                            "error_flags": 0, "received_ts": None,
                            "db_last_updated": dblu, "last_seen_ts": seen})
        out.sort(key=lambda d: d["station_id"])
        return out

    def captures(self, after_id: int = 0) -> list[dict]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT id, station_id, seq, ts, country, national, received_ts"
                " FROM captures WHERE id > ? ORDER BY id", (after_id,)).fetchall()
        return [{
            "id": rid, "station_id": sid, "seq": seq, "ts": ts,
            "tag": str(TagId(c, n)) if c is not None else None,
            "received_ts": recv,
        } for rid, sid, seq, ts, c, n, recv in rows]

    def quarantine_count(self) -> int:
        with self._lock:
            return self._conn.execute("SELECT COUNT(*) FROM quarantine").fetchone()[0]

    def visit_count(self) -> int:
        with self._lock:
            return self._conn.execute("SELECT COUNT(*) FROM visits").fetchone()[0]


def _type_nibble(msg) -> int:
    return {SystemUpdate: codec.TYPE_SYSTEM_UPDATE,
            AnimalUpdate: codec.TYPE_ANIMAL_UPDATE,
            DbSyncRequest: codec.TYPE_DB_SYNC_REQUEST,
            TrapEvent: codec.TYPE_TRAP_EVENT}[type(msg)]
