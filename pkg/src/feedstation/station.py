"""Station orchestrator: binds weighing, RFID matching, trapping and the
uplink queue into one deterministic event-driven daemon.

The station is clock-injected: hand it samples, detections, downlinks and
clock callbacks in timestamp order (milliseconds) and collect the
transmissions it wants on the air. Periodic work (status updates, database
sync) is scheduled internally; completed visits wait one RFID match window
before their AnimalUpdate is built so a late exit-tube read still counts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace

from feedstation import codec, rfid, trapctl, weighing
from feedstation.codec import (AnimalUpdate, DbSyncRequest, SystemUpdate,
                               TrapEvent, TrapUpdate)
from feedstation.rfid import RfidDetection
from feedstation.trapctl import TrapController, TrapDatabase
from feedstation.uplinkqueue import LinkModel, Transmission, UplinkQueue
from feedstation.weighing import (AnimalVisit, EntranceDetected, ExitDetected,
                                  SampleRejected, SensorFault, VisitCompleted,
                                  WeighingConfig, WeighingEngine)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvReading:
    temp_in_c: float = 24.0
    temp_out_c: float = 26.0
    rh_in_pct: float = 65.0
    rh_out_pct: float = 95.0

    def __post_init__(self) -> None:
        for name in ("rh_in_pct", "rh_out_pct"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} {v} outside 0..100")


@dataclass
class StationConfig:
    station_id: int = 1
    entrance_grams: float = 20.0
    stability_delta_grams: float = 1.0
    stability_seconds: float = 1.0
    window_seconds: float = 1.0
    sample_rate_hz: float = 20.0
    system_update_period_s: int = 600
    db_sync_period_s: int = 21_600
    rfid_match_window_s: float = 5.0
    humidity_warning_pct: float = 85.0
    queue_timeout_ms: int = 5000
    queue_backoff_cap_ms: int = 80_000
    queue_max_attempts: int | None = None
    link: LinkModel = field(default_factory=LinkModel)
    queue_log: str | None = None
    trapdb_file: str | None = None

    def __post_init__(self) -> None:
        for name in ("entrance_grams", "stability_delta_grams", "stability_seconds",
                     "window_seconds", "sample_rate_hz", "system_update_period_s",
                     "db_sync_period_s", "rfid_match_window_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def weighing_config(self) -> WeighingConfig:
        return WeighingConfig(
            entrance_grams=self.entrance_grams,
            stability_delta_grams=self.stability_delta_grams,
            stability_seconds=self.stability_seconds,
            window_seconds=self.window_seconds,
            sample_rate_hz=self.sample_rate_hz,
            station_id=self.station_id,
        )

    @classmethod
    def from_file(cls, path: str) -> "StationConfig":
        """Key-value text config: ``key = value`` lines, # comments."""
        values: dict = {}
        link_kwargs: dict = {}
        link_fields = {"drop_probability": float, "confirm_drop_probability": float,
                       "latency_ms": int, "duty_cycle_gap_ms": int}
        field_types = {f.name: f.type for f in fields(cls)}
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key = value")
                key, _, value = (x.strip() for x in line.partition("="))
                if key in link_fields:
                    link_kwargs[key] = link_fields[key](value)
                elif key in ("queue_log", "trapdb_file"):
                    values[key] = value
                elif key == "queue_max_attempts":
                    values[key] = None if value in ("none", "") else int(value)
                elif key in field_types:
                    current = getattr(cls(), key)
                    cast = int if isinstance(current, int) else float
                    values[key] = cast(value)
                else:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        if link_kwargs:
            values["link"] = LinkModel(**link_kwargs)
        return cls(**values)


class Station:
    """Single-task deterministic mode of the station daemon."""

    def __init__(self, config: StationConfig | None = None,
                 trap_db: TrapDatabase | None = None,
                 start_ms: int = 0) -> None:
        self.config = config or StationConfig()
        cfg = self.config
        self.engine = WeighingEngine(cfg.weighing_config())
        if trap_db is None and cfg.trapdb_file:
            try:
                trap_db = trapctl.load_database(cfg.trapdb_file)
            except FileNotFoundError:
                trap_db = None
        self.trap = TrapController(trap_db or TrapDatabase(),
                                   station_id=cfg.station_id)
        self.queue = UplinkQueue(cfg.queue_log, max_attempts=cfg.queue_max_attempts,
                                 timeout_ms=cfg.queue_timeout_ms,
                                 backoff_cap_ms=cfg.queue_backoff_cap_ms,
                                 duty_cycle_gap_ms=cfg.link.duty_cycle_gap_ms)
        self.env = EnvReading()
        self.rfid_fault = False
        self.detections: list[RfidDetection] = []
        self._consumed: set[int] = set()
        self._pending: list[tuple[int, AnimalVisit]] = []  # (finalize_at, visit)
        self._next_status = start_ms + cfg.system_update_period_s * 1000
        self._next_sync = start_ms + 1000  # sync shortly after boot
        self.visits_emitted: list[AnimalVisit] = []
        self.captures: list[trapctl.CaptureEvent] = []

    # -- inputs ------------------------------------------------------------

    def handle_sample(self, t_ms: int, grams: float) -> None:
        for event in self.engine.ingest(t_ms, grams):
            if isinstance(event, EntranceDetected):
                self._on_entrance(event)
            elif isinstance(event, VisitCompleted):
                window_ms = int(self.config.rfid_match_window_s * 1000)
                self._pending.append((event.visit.exit_ts + window_ms, event.visit))
            elif isinstance(event, SampleRejected):
                log.warning("sample rejected at %s: %s", event.ts, event.reason)
            elif isinstance(event, SensorFault):
                log.error("load cell fault at %s: %.1f g", event.ts, event.grams)

    def handle_detection(self, det: RfidDetection) -> None:
        self.detections.append(det)
        capture = self.trap.on_detection(det)
        if capture is not None:
            self._emit_capture(capture)

    def handle_env(self, env: EnvReading) -> None:
        self.env = env

    def handle_downlink(self, payload: bytes) -> None:
        try:
            msg = codec.decode(payload)
        except codec.CodecError as exc:
            log.warning("undecodable downlink: %s", exc)
            return
        if isinstance(msg, TrapUpdate):
            self.trap.apply_update(msg)
            self._persist_trapdb()
        else:
            log.warning("unexpected downlink type %s", type(msg).__name__)

    def flag_rfid_fault(self) -> None:
        self.rfid_fault = True

    def reset_trap(self) -> None:
        self.trap.reset()

    # -- clock -------------------------------------------------------------

    def on_clock(self, now_ms: int) -> list[Transmission]:
        self._finalize_due(now_ms)
        period = self.config.system_update_period_s * 1000
        while self._next_status <= now_ms:
            self._emit_status(self._next_status)
            self._next_status += period
        if self._next_sync is not None and self._next_sync <= now_ms:
            self._emit_sync(now_ms)
            self._next_sync = now_ms + self.config.db_sync_period_s * 1000
        return self.queue.pump(now_ms)

    def next_wakeup(self, now_ms: int) -> int | None:
        candidates = [self._next_status]
        if self._next_sync is not None:
            candidates.append(self._next_sync)
        candidates.extend(due for due, _ in self._pending)
        qw = self.queue.next_wakeup(now_ms)
        if qw is not None:
            candidates.append(qw)
        return min(candidates) if candidates else None

    def flush(self, now_ms: int) -> None:
        """End of input stream: complete any settling visit and finalize."""
        for event in self.engine.flush():
            if isinstance(event, VisitCompleted):
                window_ms = int(self.config.rfid_match_window_s * 1000)
                self._pending.append((event.visit.exit_ts + window_ms, event.visit))
        self._finalize_due(now_ms, force=True)

    # -- internals -----------------------------------------------------------

    def _on_entrance(self, event: EntranceDetected) -> None:
        window_ms = int(self.config.rfid_match_window_s * 1000)
        recent = any(abs(d.ts - event.ts) <= window_ms for d in self.detections)
        if not recent:
            capture = self.trap.on_untagged_entrance(event.ts)
            if capture is not None:
                self._emit_capture(capture)

    def _emit_capture(self, capture: trapctl.CaptureEvent) -> None:
        self.captures.append(capture)
        self._enqueue(lambda seq: TrapEvent(seq=seq, ts=capture.ts // 1000,
                                            tag=capture.tag))
        # Operators just changed something worth trapping; sync soon.
        self._next_sync = capture.ts

    def _finalize_due(self, now_ms: int, force: bool = False) -> None:
        if not self._pending:
            return
        still: list[tuple[int, AnimalVisit]] = []
        for due, visit in self._pending:
            if force or due <= now_ms:
                self._emit_visit(visit)
            else:
                still.append((due, visit))
        self._pending = still

    def _emit_visit(self, visit: AnimalVisit) -> None:
        match = rfid.match_detections(
            visit, self.detections, self._consumed,
            window_ms=int(self.config.rfid_match_window_s * 1000))
        flags = visit.flags + (("ambiguous_tag",) if match.ambiguous else ())
        visit = replace(visit, tag=match.tag, flags=flags,
                        station_id=self.config.station_id)
        self.visits_emitted.append(visit)
        self._enqueue(lambda seq: AnimalUpdate.from_measurement(
            seq=seq, tag=visit.tag, entry_ts=visit.entry_ts // 1000,
            exit_ts=visit.exit_ts // 1000, weight_grams=visit.weight_grams,
            std_grams=visit.quality_std_grams))
        self._gc_detections(visit.exit_ts)

    def _gc_detections(self, before_ms: int) -> None:
        horizon = before_ms - 60_000
        if len(self.detections) > 512:
            keep = [(i, d) for i, d in enumerate(self.detections) if d.ts >= horizon]
            self._consumed = {new_i for new_i, (old_i, _) in enumerate(keep)
                              if old_i in self._consumed}
            self.detections = [d for _, d in keep]

    def _emit_status(self, at_ms: int) -> None:
        flags = 0
        if self.engine.fault_flag:
            flags |= codec.FLAG_SCALE_FAULT
        if self.rfid_fault:
            flags |= codec.FLAG_RFID_FAULT
        if self.trap.door.state.position is trapctl.DoorPosition.FAULT:
            flags |= codec.FLAG_DOOR_FAULT
        if self.env.rh_in_pct > self.config.humidity_warning_pct:
            flags |= codec.FLAG_HUMIDITY_WARNING
        if self.queue.error_flag:
            flags |= codec.FLAG_QUEUE_PARKED
        env = self.env
        self._enqueue(lambda seq: SystemUpdate.from_readings(
            seq=seq, ts=at_ms // 1000, temp_in_c=env.temp_in_c,
            temp_out_c=env.temp_out_c, rh_in_pct=env.rh_in_pct,
            rh_out_pct=env.rh_out_pct, error_flags=flags))

    def _emit_sync(self, now_ms: int) -> None:
        self._enqueue(lambda seq: DbSyncRequest(
            seq=seq, last_updated=self.trap.db.last_updated))

    def _enqueue(self, build) -> None:
        seq = self.queue._next_seq
        payload = codec.encode(build(seq))
        got = self.queue.enqueue(payload)
        assert got == seq
        log.debug("enqueued seq=%d %d bytes", seq, len(payload))

    def _persist_trapdb(self) -> None:
        if self.config.trapdb_file:
            trapctl.save_database(self.trap.db, self.config.trapdb_file)
