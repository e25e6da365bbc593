"""Selective trapping: local trap database, capture decisions and the
coupled-door state machine with proximity-switch calibration.

The two tube doors share one motor; position 0 (home, switch asserted)
keeps the entry tube open and the trap tube closed, a half revolution
swaps them. Spring loading means an obstruction stalls progress instead
of applying motor force to the animal.
"""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass
from enum import Enum

from feedstation.codec import TrapUpdate
from feedstation.rfid import RfidDetection, TagId

log = logging.getLogger(__name__)

TRAPDB_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrapDatabase:
    entries: frozenset[TagId] = frozenset()
    master: bool = False
    last_updated: int = 0  # unix seconds

    def with_update(self, update: TrapUpdate) -> "TrapDatabase":
        return apply_trap_update(self, update)


def should_trap(db: TrapDatabase, detection: RfidDetection | None = None,
                untagged_entrance: bool = False) -> bool:
    """Pure capture decision: listed tag, or any untagged animal when the
    master entry is set."""
    if detection is not None and untagged_entrance:
        raise ValueError("evaluate one trigger at a time")
    if detection is not None:
        return detection.tag in db.entries
    return untagged_entrance and db.master


def apply_trap_update(db: TrapDatabase, update: TrapUpdate) -> TrapDatabase:
    """Fold a downlink delta into the database. Stale updates (older than
    last_updated) are ignored; replaying the newest update is a no-op."""
    if update.server_time < db.last_updated:
        log.info("stale trap update ignored: %s < %s",
                 update.server_time, db.last_updated)
        return db
    entries = set(db.entries)
    for kind, tag in update.ops:
        if kind == "add":
            entries.add(tag)
        else:
            entries.discard(tag)
    master = db.master if update.master is None else update.master
    return TrapDatabase(entries=frozenset(entries), master=master,
                        last_updated=update.server_time)


def save_database(db: TrapDatabase, path: str) -> None:
    """Versioned text file, written atomically so a power cycle keeps
    either the old or the new database."""
    lines = [f"version {TRAPDB_FORMAT_VERSION}",
             f"master {int(db.master)}",
             f"last_updated {db.last_updated}"]
    lines.extend(str(tag) for tag in sorted(db.entries))
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "w") as f:
            f.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_database(path: str) -> TrapDatabase:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or not lines[0].startswith("version "):
        raise ValueError(f"{path}: missing version header")
    version = int(lines[0].split()[1])
    if version != TRAPDB_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    master = False
    last_updated = 0
    entries = set()
    for ln in lines[1:]:
        if ln.startswith("master "):
            master = bool(int(ln.split()[1]))
        elif ln.startswith("last_updated "):
            last_updated = int(ln.split()[1])
        else:
            entries.add(TagId.parse(ln))
    return TrapDatabase(entries=frozenset(entries), master=master,
                        last_updated=last_updated)


# -- door state machine ----------------------------------------------------

class DoorPosition(Enum):
    ENTRY_OPEN_TRAP_CLOSED = "entry_open"
    ENTRY_CLOSED_TRAP_OPEN = "trap_open"
    MOVING = "moving"
    FAULT = "fault"


@dataclass(frozen=True)
class DoorState:
    position: DoorPosition
    progress: float = 0.0  # 0..1 while MOVING

    @property
    def entry_open(self) -> bool:
        return self.position is DoorPosition.ENTRY_OPEN_TRAP_CLOSED

    @property
    def trap_open(self) -> bool:
        return self.position is DoorPosition.ENTRY_CLOSED_TRAP_OPEN


class DoorCommand(Enum):
    OPEN_TRAP = "open_trap"
    RESET = "reset"


@dataclass(frozen=True)
class CaptureEvent:
    tag: TagId | None
    ts: int
    station_id: int = 0


class DoorFault(Exception):
    pass


class DoorController:
    """Simulated stepper + proximity switch. Kinematics are simplified to
    fixed steps per revolution; only the logic matters here."""

    def __init__(self, steps_per_revolution: int = 200,
                 travel_steps: int | None = None,
                 start_offset: int = 0,
                 switch_working: bool = True) -> None:
        self.steps_per_revolution = steps_per_revolution
        self.travel_steps = travel_steps or steps_per_revolution // 2
        self._actual = start_offset % steps_per_revolution  # true shaft angle
        self._counter = 0  # believed position, zeroed at the switch
        self.switch_working = switch_working
        self.spring_yielded = False
        self.state = DoorState(DoorPosition.MOVING, 0.0)  # unknown until calibrated
        self._obstruction_steps = 0
        self._calibrated = False

    def inject_obstruction(self, steps: int) -> None:
        """Blocks door travel for the next ``steps`` step attempts; the
        spring yields so no more than spring force is ever applied."""
        self._obstruction_steps = steps

    def _switch_asserted(self) -> bool:
        return self.switch_working and self._actual == 0

    def calibrate(self) -> DoorState:
        """Rotate until the proximity switch fires, zero the counter, end at
        home (entry open). Fault if a full revolution finds no switch."""
        if self.state.position is DoorPosition.FAULT:
            return self.state
        for _ in range(self.steps_per_revolution + 1):
            if self._switch_asserted():
                self._counter = 0
                self._calibrated = True
                self.state = DoorState(DoorPosition.ENTRY_OPEN_TRAP_CLOSED)
                return self.state
            self._step(-1)
        self.state = DoorState(DoorPosition.FAULT)
        return self.state

    def actuate(self, command: DoorCommand) -> list[DoorState]:
        """Run a full door motion; returns the traversed state sequence
        ending in the commanded terminal state (or FAULT)."""
        if self.state.position is DoorPosition.FAULT:
            raise DoorFault("door in fault state, calibrate or service first")
        if not self._calibrated:
            self.calibrate()
            if self.state.position is DoorPosition.FAULT:
                return [self.state]
        target = self.travel_steps if command is DoorCommand.OPEN_TRAP else 0
        direction = 1 if target > self._counter else -1
        seq: list[DoorState] = []
        guard = self.steps_per_revolution * 4  # late completion allowed, stall is not
        while self._counter != target and guard > 0:
            guard -= 1
            self._step(direction)
            progress = abs(self._counter) / self.travel_steps
            if command is DoorCommand.RESET:
                progress = 1.0 - progress
            seq.append(DoorState(DoorPosition.MOVING, min(max(progress, 0.0), 1.0)))
        if self._counter != target:
            self.state = DoorState(DoorPosition.FAULT)
            seq.append(self.state)
            return seq
        if command is DoorCommand.RESET:
            # Home position must be confirmed by the switch.
            if not self._switch_asserted():
                self.state = DoorState(DoorPosition.FAULT)
                seq.append(self.state)
                return seq
            self.state = DoorState(DoorPosition.ENTRY_OPEN_TRAP_CLOSED)
        else:
            self.state = DoorState(DoorPosition.ENTRY_CLOSED_TRAP_OPEN)
        seq.append(self.state)
        return seq

    def _step(self, direction: int) -> bool:
        if self._obstruction_steps > 0:
            self._obstruction_steps -= 1
            self.spring_yielded = True
            return False
        self._actual = (self._actual + direction) % self.steps_per_revolution
        self._counter += direction
        return True


class TrapController:
    """Arms the door from capture decisions; at most one CaptureEvent per
    activation, entry stays closed until an operator reset."""

    def __init__(self, db: TrapDatabase, door: DoorController | None = None,
                 station_id: int = 0) -> None:
        self.db = db
        self.door = door or DoorController()
        if not self.door._calibrated:
            self.door.calibrate()
        self.station_id = station_id
        self.active_capture: CaptureEvent | None = None

    @property
    def armed(self) -> bool:
        return self.active_capture is None and \
            self.door.state.position is not DoorPosition.FAULT

    def on_detection(self, detection: RfidDetection) -> CaptureEvent | None:
        if not self.armed or not should_trap(self.db, detection=detection):
            return None
        return self._fire(detection.tag, detection.ts)

    def on_untagged_entrance(self, ts: int) -> CaptureEvent | None:
        if not self.armed or not should_trap(self.db, untagged_entrance=True):
            return None
        return self._fire(None, ts)

    def _fire(self, tag: TagId | None, ts: int) -> CaptureEvent | None:
        self.door.actuate(DoorCommand.OPEN_TRAP)
        if self.door.state.position is DoorPosition.FAULT:
            return None
        self.active_capture = CaptureEvent(tag=tag, ts=ts, station_id=self.station_id)
        return self.active_capture

    def reset(self) -> None:
        """Operator reset after removing the transport box."""
        self.door.actuate(DoorCommand.RESET)
        self.active_capture = None

    def apply_update(self, update: TrapUpdate) -> None:
        self.db = apply_trap_update(self.db, update)
