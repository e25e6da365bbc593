// Daily min/avg/max aggregation over the server CSV export. The export is
// the single source for long-range charts; parsing keeps the exact bytes
// of each row so values can be traced back to the server response.

export interface ExportRow {
  station_id: number;
  seq: number;
  tag: string;
  entry_ts: number;
  exit_ts: number;
  weight_g: number;
  std_g: number;
  raw: string;
}

export interface DailyPoint {
  day: number;
  min: number;
  avg: number;
  max: number;
  visits: number;
}

export const EXPORT_HEADER = "station_id,seq,tag,entry_ts,exit_ts,weight_g,std_g";

export function parseExport(csv: string): ExportRow[] {
  const lines = csv.split("\n").filter((l) => l.length > 0);
  if (lines.length === 0 || lines[0] !== EXPORT_HEADER) {
    throw new Error(`unexpected export header: ${lines[0] ?? "(empty)"}`);
  }
  return lines.slice(1).map((raw) => {
    const f = raw.split(",");
    if (f.length !== 7) throw new Error(`bad export row: ${raw}`);
    return {
      station_id: Number(f[0]),
      seq: Number(f[1]),
      tag: f[2],
      entry_ts: Number(f[3]),
      exit_ts: Number(f[4]),
      weight_g: Number(f[5]),
      std_g: Number(f[6]),
      raw,
    };
  });
}

export function dailySeries(rows: ExportRow[]): DailyPoint[] {
  const byDay = new Map<number, number[]>();
  for (const row of rows) {
    const day = Math.floor(row.entry_ts / 86_400);
    const bucket = byDay.get(day);
    if (bucket) bucket.push(row.weight_g);
    else byDay.set(day, [row.weight_g]);
  }
  return [...byDay.entries()]
    .sort((a, b) => a[0] - b[0])
    .map(([day, weights]) => ({
      day,
      min: Math.min(...weights),
      avg: weights.reduce((s, w) => s + w, 0) / weights.length,
      max: Math.max(...weights),
      visits: weights.length,
    }));
}

// Canonical text form used by tests to compare the chart's series with an
// independent aggregation of the same export bytes.
export function seriesFingerprint(series: DailyPoint[]): string {
  return series
    .map((p) => `${p.day}:${p.min.toFixed(1)}/${p.avg.toFixed(3)}/${p.max.toFixed(1)}/${p.visits}`)
    .join(";");
}
