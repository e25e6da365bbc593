// Typed client for the telemetry server HTTP API. Every value the console
// shows comes through here; there is no other data source.

export interface StationStatus {
  station_id: number;
  ts: number | null;
  temp_in_c: number | null;
  temp_out_c: number | null;
  rh_in_pct: number | null;
  rh_out_pct: number | null;
  error_flags: number;
  received_ts: number | null;
  db_last_updated: number;
  last_seen_ts: number | null;
}

export interface Visit {
  station_id: number;
  seq: number;
  tag: string | null;
  entry_ts: number;
  exit_ts: number;
  weight_g: number;
  std_g: number;
  received_ts: number;
}

export interface Capture {
  id: number;
  station_id: number;
  seq: number;
  ts: number;
  tag: string | null;
  received_ts: number;
}

export interface VisitFilter {
  station?: number;
  tag?: string;
  untagged?: boolean;
  t0?: number;
  t1?: number;
  wmin?: number;
  wmax?: number;
  max_std?: number;
}

export interface VisitPage {
  visits: Visit[];
  next_cursor: string | null;
}

export interface TrapTargets {
  targets: string[];
  master: boolean;
}

function query(params: Record<string, unknown>): string {
  const parts: string[] = [];
  for (const [k, v] of Object.entries(params)) {
    if (v !== undefined && v !== null && v !== "") {
      parts.push(`${encodeURIComponent(k)}=${encodeURIComponent(String(v))}`);
    }
  }
  return parts.length ? `?${parts.join("&")}` : "";
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private token: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async get<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path);
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    return (await resp.json()) as T;
  }

  status(): Promise<{ stations: StationStatus[]; server_time: number }> {
    return this.get("/status");
  }

  visits(filter: VisitFilter, limit = 200, cursor?: string): Promise<VisitPage> {
    return this.get("/visits" + query({ ...filter, limit, cursor }));
  }

  captures(afterId = 0): Promise<{ captures: Capture[] }> {
    return this.get("/captures" + query({ after_id: afterId }));
  }

  trapTargets(stationId: number): Promise<TrapTargets> {
    return this.get(`/stations/${stationId}/trap-targets`);
  }

  async exportCsv(filter: VisitFilter): Promise<string> {
    const resp = await this.fetchFn(this.baseUrl + "/export.csv" + query({ ...filter }));
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    return await resp.text();
  }

  async setTrapTargets(
    stationId: number,
    body: { add?: string[]; remove?: string[]; master?: boolean | null },
  ): Promise<{ ok: boolean; change_ts: number }> {
    const resp = await this.fetchFn(`${this.baseUrl}/stations/${stationId}/trap-targets`, {
      method: "POST",
      headers: {
        "Content-Type": "application/json",
        "X-Operator-Token": this.token,
      },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    return (await resp.json()) as { ok: boolean; change_ts: number };
  }
}
