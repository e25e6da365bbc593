"""State-based weighing engine: entrance/exit detection, stability windows,
stable-weight extraction and per-animal attribution.

The platform signal is segmented into measurement periods at every weight
shift larger than the entrance threshold. Only samples inside stability
windows (consecutive steps within 1 g, lasting at least a second) are
trusted; per-animal weights come from differences of the stable weights of
the periods flanking each entrance, with exits paired to entrances by
weight-shift agreement.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple

from feedstation.core import stable_runs
from feedstation.rfid import TagId

log = logging.getLogger(__name__)


class WeightSample(NamedTuple):
    t: int  # milliseconds
    grams: float


@dataclass(frozen=True)
class StabilityWindow:
    start_index: int
    end_index: int  # inclusive
    mean_grams: float
    std_grams: float


@dataclass
class MeasurementPeriod:
    """Samples between two shift events plus their trusted-weight summary."""

    samples: list[WeightSample] = field(default_factory=list)
    stable_weight_grams: float | None = None
    quality_std_grams: float | None = None

    def mean(self) -> float:
        if not self.samples:
            return 0.0
        return sum(s.grams for s in self.samples) / len(self.samples)


class ScaleState(Enum):
    IDLE = "idle"
    ENTRANCE = "entrance"  # transient, resolved within one ingest step
    WEIGHING = "weighing"
    EXIT = "exit"  # transient


@dataclass(frozen=True)
class AnimalVisit:
    tag: TagId | None
    entry_ts: int
    exit_ts: int
    weight_grams: float
    quality_std_grams: float
    station_id: int = 0
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class EntranceDetected:
    ts: int
    animal_count: int


@dataclass(frozen=True)
class ExitDetected:
    ts: int
    animal_count: int


@dataclass(frozen=True)
class VisitCompleted:
    visit: AnimalVisit


@dataclass(frozen=True)
class SampleRejected:
    ts: int
    reason: str


@dataclass(frozen=True)
class SensorFault:
    ts: int
    grams: float


WeighingEvent = EntranceDetected | ExitDetected | VisitCompleted | SampleRejected | SensorFault


@dataclass
class WeighingConfig:
    entrance_grams: float = 20.0
    stability_delta_grams: float = 1.0
    stability_seconds: float = 1.0
    window_seconds: float = 1.0
    sample_rate_hz: float = 20.0
    pairing_tolerance_grams: float = 2.0
    tare_limit_grams_per_10s: float = 1.0
    tare_deadband_grams: float = 0.25
    load_cell_min_grams: float = -50.0
    load_cell_max_grams: float = 6000.0
    # After the last exit, wait up to this long for the baseline to settle
    # before attributing (the final exit shift needs the post period).
    settle_seconds: float = 2.0
    station_id: int = 0

    @property
    def window_samples(self) -> int:
        return max(2, round(self.window_seconds * self.sample_rate_hz))

    @property
    def stability_min_samples(self) -> int:
        return max(2, round(self.stability_seconds * self.sample_rate_hz))


def find_stability_windows(samples: Iterable[WeightSample] | MeasurementPeriod,
                           delta_grams: float = 1.0,
                           min_samples: int = 20) -> list[StabilityWindow]:
    """All maximal windows with consecutive steps <= delta_grams spanning at
    least min_samples. Disjoint, ordered by start."""
    if isinstance(samples, MeasurementPeriod):
        samples = samples.samples
    grams = [s.grams for s in samples]
    windows = []
    for start, end in stable_runs(grams, delta_grams, min_samples):
        seg = grams[start:end + 1]
        mean = sum(seg) / len(seg)
        var = sum((g - mean) ** 2 for g in seg) / len(seg)
        windows.append(StabilityWindow(start, end, mean, math.sqrt(var)))
    return windows


def stable_weight(period: MeasurementPeriod,
                  windows: list[StabilityWindow] | None = None,
                  delta_grams: float = 1.0,
                  min_samples: int = 20) -> tuple[float, float] | None:
    """Mean and population std over the union of all stability windows;
    None when the period has no trusted samples."""
    if windows is None:
        windows = find_stability_windows(period, delta_grams, min_samples)
    if not windows:
        return None
    values: list[float] = []
    for w in windows:
        values.extend(s.grams for s in period.samples[w.start_index:w.end_index + 1])
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


@dataclass(frozen=True)
class ShiftEvent:
    kind: str  # "entry" | "exit"
    ts: int


@dataclass
class PeriodStats:
    stable: float | None
    std: float | None
    fallback_mean: float

    @classmethod
    def of(cls, period: MeasurementPeriod) -> "PeriodStats":
        return cls(period.stable_weight_grams, period.quality_std_grams, period.mean())


def attribute_weights(period_stats: list[PeriodStats], events: list[ShiftEvent],
                      tolerance_grams: float = 2.0,
                      station_id: int = 0) -> list[AnimalVisit]:
    """Recover per-animal weights once the platform is empty again.

    ``period_stats`` has one entry more than ``events``; event i separates
    periods i and i+1. Each animal's weight is the difference of the stable
    weights flanking its entrance. Exits pair with entrances whose shift
    agrees within the tolerance, first-in-first-out; leftovers pair by
    closest shift and carry an "unresolved" flag.
    """
    if len(period_stats) != len(events) + 1:
        raise ValueError("need one period per event boundary plus one")

    def level(i: int) -> tuple[float, bool]:
        st = period_stats[i]
        if st.stable is not None:
            return st.stable, True
        return st.fallback_mean, False

    entrances: list[dict] = []
    exits: list[dict] = []
    for i, ev in enumerate(events):
        before, ok_b = level(i)
        after, ok_a = level(i + 1)
        rec = {"ts": ev.ts, "shift": after - before, "lowq": not (ok_b and ok_a),
               "idx": i, "matched": False}
        (entrances if ev.kind == "entry" else exits).append(rec)

    def visit_from(ent: dict, ex: dict, flags: tuple[str, ...]) -> AnimalVisit:
        weight = ent["shift"]
        if weight <= 0:
            weight = max(-ex["shift"], 0.0)
            if "low_quality" not in flags:
                flags = flags + ("low_quality",)
        std_b = period_stats[ent["idx"]].std
        std_a = period_stats[ent["idx"] + 1].std
        quality = math.sqrt((std_b or 0.0) ** 2 + (std_a or 0.0) ** 2)
        if (ent["lowq"] or ex["lowq"]) and "low_quality" not in flags:
            flags = flags + ("low_quality",)
        return AnimalVisit(tag=None, entry_ts=ent["ts"], exit_ts=ex["ts"],
                           weight_grams=weight, quality_std_grams=quality,
                           station_id=station_id, flags=flags)

    visits: list[AnimalVisit] = []
    for ex in exits:
        drop = -ex["shift"]
        for ent in entrances:
            if not ent["matched"] and ent["ts"] < ex["ts"] \
                    and abs(ent["shift"] - drop) <= tolerance_grams:
                ent["matched"] = True
                ex["matched"] = True
                visits.append(visit_from(ent, ex, ()))
                break
    # Second pass: no shift agreement at all (animal ate, dropped food...).
    for ex in exits:
        if ex["matched"]:
            continue
        drop = -ex["shift"]
        candidates = [e for e in entrances if not e["matched"] and e["ts"] < ex["ts"]]
        if not candidates:
            continue
        ent = min(candidates, key=lambda e: abs(e["shift"] - drop))
        ent["matched"] = True
        visits.append(visit_from(ent, ex, ("unresolved",)))
    visits.sort(key=lambda v: v.entry_ts)
    return visits


class WeighingEngine:
    """Streaming engine: feed time-ordered samples, receive shift events and
    completed visits. Single-threaded; one ingest call at a time.

    The reference level for the 20 g shift detection is the mean of the
    newest stability run inside the current period (falling back to the
    period mean while none has formed yet), tracked incrementally.
    """

    def __init__(self, config: WeighingConfig | None = None) -> None:
        self.config = config or WeighingConfig()
        self.state = ScaleState.IDLE
        self.animal_count = 0
        self.tare = 0.0
        self.fault_flag = False
        self._last_t: int | None = None
        self._last_tare_t: int | None = None
        self._window: deque[WeightSample] = deque(maxlen=self.config.window_samples)
        self._window_sum = 0.0
        self._period: list[WeightSample] = []
        self._period_sum = 0.0
        self._periods: list[MeasurementPeriod] = []
        self._events: list[ShiftEvent] = []
        self._level: float | None = None
        self._run_len = 0
        self._run_sum = 0.0
        self._run_prev: float | None = None
        self._prev_grams: float | None = None
        self._last_jump_t: int | None = None
        self._settling = False
        self._settle_deadline = 0

    # -- public ops ------------------------------------------------------

    def ingest(self, t: int, grams: float) -> list[WeighingEvent]:
        cfg = self.config
        if self._last_t is not None and t <= self._last_t:
            return [SampleRejected(t, "non-monotonic timestamp")]
        self._last_t = t
        if not math.isfinite(grams) or \
                not cfg.load_cell_min_grams <= grams <= cfg.load_cell_max_grams:
            self.fault_flag = True
            return [SensorFault(t, grams)]

        sample = WeightSample(t, grams - self.tare)
        # Reference level snapshot precedes this sample: detection must not
        # race the level flipping onto the new plateau.
        ref = 0.0 if self.state is ScaleState.IDLE else self._reference_level()
        if self._prev_grams is not None and \
                abs(sample.grams - self._prev_grams) > cfg.stability_delta_grams:
            self._last_jump_t = t
        self._prev_grams = sample.grams
        if len(self._window) == self._window.maxlen:
            self._window_sum -= self._window[0].grams
        self._window.append(sample)
        self._window_sum += sample.grams
        self._append_to_period(sample)

        out: list[WeighingEvent] = []
        if self.state is ScaleState.IDLE:
            self._trim_idle_buffer()
            if self._detect_entrance(reference=ref):
                out.extend(self._on_entrance())
            else:
                if self._settling and (t >= self._settle_deadline
                                       or self._run_len >= cfg.stability_min_samples):
                    out.extend(self._attribute_group(self._snapshot_period()))
                if not self._settling:
                    self._update_tare(t)
        else:
            if self._detect_entrance(reference=ref):
                out.extend(self._on_entrance())
            elif self._detect_exit(reference=ref):
                out.extend(self._on_exit(ref))
        return out

    def ingest_samples(self, samples: Iterable[tuple[int, float]]) -> list[WeighingEvent]:
        out: list[WeighingEvent] = []
        for t, g in samples:
            out.extend(self.ingest(t, g))
        return out

    def zero_scale(self, idle_samples: Iterable[WeightSample] | None = None) -> float:
        """Re-zero from a window of idle samples. One call corrects at most
        the 10 s drift budget (1 g by default), so a weight step can never
        be absorbed; callers invoke this at most every 10 s. No-op with a
        warning outside Idle."""
        if self.state is not ScaleState.IDLE:
            log.warning("zero_scale ignored: scale not idle")
            return self.tare
        samples = list(idle_samples) if idle_samples is not None else list(self._window)
        if not samples:
            return self.tare
        mean_err = sum(s.grams for s in samples) / len(samples)
        limit = self.config.tare_limit_grams_per_10s
        self.tare += max(-limit, min(limit, mean_err))
        return self.tare

    def flush(self) -> list[WeighingEvent]:
        """Finish a pending attribution (stream ended while settling)."""
        if self._settling:
            return self._attribute_group(self._snapshot_period())
        return []

    # -- detection -------------------------------------------------------

    def _window_full(self) -> bool:
        return len(self._window) == self._window.maxlen

    def _window_mean(self) -> float:
        return self._window_sum / len(self._window)

    def _detect_entrance(self, reference: float) -> bool:
        # Every sample of the last window must sit above the threshold:
        # a single spike must not count as an animal.
        if not self._window_full():
            return False
        thr = reference + self.config.entrance_grams
        if self._window_mean() <= thr:
            return False
        return min(s.grams for s in self._window) > thr

    def _detect_exit(self, reference: float) -> bool:
        if not self._window_full():
            return False
        return self._window_mean() < reference - self.config.entrance_grams

    def _reference_level(self) -> float:
        if self._level is not None:
            return self._level
        if self._period:
            return self._period_sum / len(self._period)
        return 0.0

    # -- period bookkeeping ----------------------------------------------

    def _append_to_period(self, sample: WeightSample) -> None:
        self._period.append(sample)
        self._period_sum += sample.grams
        # Incremental stability-run tracking for the reference level.
        if self._run_prev is not None and \
                abs(sample.grams - self._run_prev) <= self.config.stability_delta_grams:
            self._run_len += 1
            self._run_sum += sample.grams
        else:
            self._run_len = 1
            self._run_sum = sample.grams
        self._run_prev = sample.grams
        if self._run_len >= self.config.stability_min_samples:
            self._level = self._run_sum / self._run_len

    def _reset_period(self, carried: list[WeightSample]) -> None:
        self._period = []
        self._period_sum = 0.0
        self._level = None
        self._run_len = 0
        self._run_sum = 0.0
        self._run_prev = None
        for s in carried:
            self._append_to_period(s)

    def _trim_idle_buffer(self) -> None:
        # Idle baseline history only needs a few seconds of context.
        cap = self.config.window_samples * 10
        if len(self._period) > cap + 40 and not self._settling:
            dropped = self._period[:len(self._period) - cap]
            del self._period[:len(self._period) - cap]
            self._period_sum -= sum(s.grams for s in dropped)

    def _close_period(self, keep_from_end: int) -> MeasurementPeriod:
        """Close the current period, carrying the newest ``keep_from_end``
        samples into the next one (they belong to the new plateau). The
        detection window restarts from the carried samples so stale
        pre-transition readings can never retrigger a shift."""
        cut = max(len(self._period) - keep_from_end, 0)
        closed = MeasurementPeriod(samples=self._period[:cut])
        carried = self._period[cut:]
        sw = stable_weight(closed, delta_grams=self.config.stability_delta_grams,
                           min_samples=self.config.stability_min_samples)
        if sw is not None:
            closed.stable_weight_grams, closed.quality_std_grams = sw
        self._reset_period(carried)
        self._window.clear()
        self._window.extend(carried[-self._window.maxlen:])
        self._window_sum = sum(s.grams for s in self._window)
        return closed

    def _snapshot_period(self) -> MeasurementPeriod:
        period = MeasurementPeriod(samples=list(self._period))
        sw = stable_weight(period, delta_grams=self.config.stability_delta_grams,
                           min_samples=self.config.stability_min_samples)
        if sw is not None:
            period.stable_weight_grams, period.quality_std_grams = sw
        return period

    # -- transitions -----------------------------------------------------

    def _on_entrance(self) -> list[WeighingEvent]:
        entrance_ts = self._window[0].t
        closed = self._close_period(keep_from_end=len(self._window))
        out: list[WeighingEvent] = []
        if self._settling:
            # The previous group was still waiting for its baseline; the
            # period just closed is that baseline and also this group's.
            out.extend(self._attribute_group(closed))
        self._periods.append(closed)
        self._events.append(ShiftEvent("entry", entrance_ts))
        self.animal_count += 1
        self.state = ScaleState.WEIGHING
        out.append(EntranceDetected(entrance_ts, self.animal_count))
        return out

    def _on_exit(self, reference: float) -> list[WeighingEvent]:
        thr = reference - self.config.entrance_grams
        drop_pos = 0
        for i, s in enumerate(self._window):
            if s.grams < thr:
                drop_pos = i
                break
        exit_ts = self._window[drop_pos].t
        self._periods.append(self._close_period(keep_from_end=len(self._window) - drop_pos))
        self._events.append(ShiftEvent("exit", exit_ts))
        self.animal_count -= 1
        out: list[WeighingEvent] = [ExitDetected(exit_ts, self.animal_count)]
        if self.animal_count == 0:
            self.state = ScaleState.IDLE
            self._settling = True
            self._settle_deadline = exit_ts + int(self.config.settle_seconds * 1000)
        else:
            self.state = ScaleState.WEIGHING
        return out

    def _attribute_group(self, post: MeasurementPeriod) -> list[WeighingEvent]:
        self._settling = False
        stats = [PeriodStats.of(p) for p in self._periods] + [PeriodStats.of(post)]
        visits = attribute_weights(stats, self._events,
                                   self.config.pairing_tolerance_grams,
                                   self.config.station_id)
        self._periods = []
        self._events = []
        return [VisitCompleted(v) for v in visits]

    def _update_tare(self, t: int) -> None:
        if not self._window_full():
            return
        if self._last_tare_t is None:
            self._last_tare_t = t
            return
        dt = t - self._last_tare_t
        if dt <= 0:
            return
        self._last_tare_t = t
        # Zeroing chases slow drift only: never a window with a jump in it
        # (that is entrance/fault territory), never a large offset.
        if self._last_jump_t is not None and self._last_jump_t > self._window[0].t:
            return
        err = self._window_mean()
        if abs(err) < self.config.tare_deadband_grams \
                or abs(err) >= self.config.entrance_grams / 2:
            return
        limit = self.config.tare_limit_grams_per_10s * dt / 10_000.0
        self.tare += max(-limit, min(limit, err))
