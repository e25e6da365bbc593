// Console view model: all state the UI renders, fed exclusively by API
// responses. Rendering layers (DOM, SVG chart) read this and never talk to
// the server themselves.
//
// Invariants kept here:
//  - an edit appears in `applied` targets only after the server ack, and
//    counts as "live on station" only once the station's own database time
//    has caught up (db_last_updated >= change_ts);
//  - toggling the master flag arms a confirmation gate first;
//  - every chart/table value is copied verbatim from a server response.

import {
  ApiClient,
  Capture,
  StationStatus,
  Visit,
  VisitFilter,
} from "./api.js";
import { dailySeries, DailyPoint, parseExport } from "./aggregate.js";

const TAG_PATTERN = /^\d{1,4}_\d{1,12}$/;

export const ERROR_FLAG_NAMES: [number, string][] = [
  [0x01, "scale"],
  [0x02, "rfid"],
  [0x04, "door"],
  [0x08, "humidity"],
  [0x10, "queue"],
];

export function flagNames(mask: number): string[] {
  return ERROR_FLAG_NAMES.filter(([bit]) => mask & bit).map(([, name]) => name);
}

export function validTag(text: string): boolean {
  if (!TAG_PATTERN.test(text)) return false;
  const [country, national] = text.split("_");
  return Number(country) <= 1023 && BigInt(national) < 1n << 38n;
}

export interface PendingOp {
  kind: "add" | "remove";
  tag: string;
  change_ts: number;
  acked: boolean;
}

export interface WeightPoint {
  t: number;
  weight: number;
  std: number;
}

export interface ConsoleState {
  stations: StationStatus[];
  serverTime: number;
  visits: Visit[];
  nextCursor: string | null;
  filter: VisitFilter;
  series: WeightPoint[];
  daily: DailyPoint[];
  targets: string[];
  master: boolean;
  pendingOps: PendingOp[];
  masterConfirmArmed: boolean;
  alerts: Capture[];
  banner: string | null;
  stale: boolean;
  tagError: string | null;
}

export class ConsoleViewModel {
  state: ConsoleState = {
    stations: [],
    serverTime: 0,
    visits: [],
    nextCursor: null,
    filter: {},
    series: [],
    daily: [],
    targets: [],
    master: false,
    pendingOps: [],
    masterConfirmArmed: false,
    alerts: [],
    banner: null,
    stale: false,
    tagError: null,
  };
  private lastCaptureId = 0;

  constructor(private api: ApiClient, public stationId: number = 1) {}

  private fail(context: string, err: unknown): void {
    this.state.banner = `${context}: ${err instanceof Error ? err.message : err}`;
    this.state.stale = true;
  }

  async refreshStatus(): Promise<void> {
    try {
      const data = await this.api.status();
      this.state.stations = data.stations;
      this.state.serverTime = data.server_time;
      this.state.banner = null;
      this.state.stale = false;
      this.reconcilePending();
    } catch (err) {
      this.fail("status", err);
    }
  }

  async refreshVisits(filter?: VisitFilter, cursor?: string): Promise<void> {
    if (filter !== undefined) this.state.filter = filter;
    try {
      const page = await this.api.visits(this.state.filter, 200, cursor);
      this.state.visits = cursor ? [...this.state.visits, ...page.visits] : page.visits;
      this.state.nextCursor = page.next_cursor;
      this.state.series = this.state.visits
        .map((v) => ({ t: v.entry_ts, weight: v.weight_g, std: v.std_g }))
        .sort((a, b) => a.t - b.t);
      this.state.banner = null;
      this.state.stale = false;
    } catch (err) {
      this.fail("visits", err);
    }
  }

  async loadMoreVisits(): Promise<void> {
    if (this.state.nextCursor) {
      await this.refreshVisits(undefined, this.state.nextCursor);
    }
  }

  async refreshDaily(): Promise<void> {
    try {
      const csv = await this.api.exportCsv(this.state.filter);
      this.state.daily = dailySeries(parseExport(csv));
    } catch (err) {
      this.fail("export", err);
    }
  }

  async refreshTargets(): Promise<void> {
    try {
      const data = await this.api.trapTargets(this.stationId);
      this.state.targets = data.targets;
      this.state.master = data.master;
    } catch (err) {
      this.fail("targets", err);
    }
  }

  async refreshAlerts(): Promise<void> {
    try {
      const data = await this.api.captures(this.lastCaptureId);
      for (const cap of data.captures) {
        if (cap.id <= this.lastCaptureId) continue; // replayed feed entry
        this.state.alerts.push(cap);
        this.lastCaptureId = cap.id;
      }
    } catch (err) {
      this.fail("captures", err);
    }
  }

  async refreshAll(): Promise<void> {
    await this.refreshStatus();
    await this.refreshVisits();
    await this.refreshTargets();
    await this.refreshAlerts();
  }

  /** Submit an add/remove; resolves false (with tagError set) on bad input.
   * The op is tracked as pending until the station has synced past it. */
  async submitTargetEdit(kind: "add" | "remove", tag: string): Promise<boolean> {
    if (!validTag(tag)) {
      this.state.tagError = `not a CCC_NNNNNNNNNNNN tag: ${tag}`;
      return false;
    }
    this.state.tagError = null;
    try {
      const body = kind === "add" ? { add: [tag] } : { remove: [tag] };
      const resp = await this.api.setTrapTargets(this.stationId, body);
      this.state.pendingOps.push({ kind, tag, change_ts: resp.change_ts, acked: true });
      await this.refreshTargets();
      this.reconcilePending();
      return true;
    } catch (err) {
      this.fail("trap edit", err);
      return false;
    }
  }

  /** First call arms the confirmation; the second actually posts. */
  async toggleMaster(value: boolean): Promise<boolean> {
    if (!this.state.masterConfirmArmed) {
      this.state.masterConfirmArmed = true;
      return false;
    }
    this.state.masterConfirmArmed = false;
    try {
      const resp = await this.api.setTrapTargets(this.stationId, { master: value });
      this.state.pendingOps.push({
        kind: value ? "add" : "remove",
        tag: "(master)",
        change_ts: resp.change_ts,
        acked: true,
      });
      await this.refreshTargets();
      this.reconcilePending();
      return true;
    } catch (err) {
      this.fail("master toggle", err);
      return false;
    }
  }

  cancelMasterConfirm(): void {
    this.state.masterConfirmArmed = false;
  }

  /** Drop pending ops once the station database time has passed them. */
  private reconcilePending(): void {
    const station = this.state.stations.find((s) => s.station_id === this.stationId);
    if (!station) return;
    this.state.pendingOps = this.state.pendingOps.filter(
      (op) => op.change_ts > station.db_last_updated,
    );
  }

  pendingForStation(): PendingOp[] {
    return [...this.state.pendingOps];
  }

  statusAge(station: StationStatus): number | null {
    if (station.received_ts === null) return null;
    return this.state.serverTime - station.received_ts;
  }
}
