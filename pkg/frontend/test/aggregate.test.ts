import { describe, expect, it } from "vitest";

import { dailySeries, parseExport, seriesFingerprint } from "../src/aggregate.js";

const CSV = [
  "station_id,seq,tag,entry_ts,exit_ts,weight_g,std_g",
  "1,1,756_000000000042,1000,1100,40.0,0.3",
  "1,2,756_000000000042,90000,90100,41.0,0.2",
  "1,3,,100000,100100,43.0,0.4",
  "",
].join("\n");

describe("export parsing", () => {
  it("parses rows and keeps raw bytes", () => {
    const rows = parseExport(CSV);
    expect(rows).toHaveLength(3);
    expect(rows[0].weight_g).toBe(40.0);
    expect(rows[0].raw).toBe("1,1,756_000000000042,1000,1100,40.0,0.3");
    expect(rows[2].tag).toBe("");
  });

  it("rejects an unexpected header", () => {
    expect(() => parseExport("nope\n1,2,3\n")).toThrow(/header/);
  });

  it("rejects malformed rows", () => {
    expect(() => parseExport(CSV + "only,three,fields\n")).toThrow(/bad export row/);
  });
});

describe("daily aggregation", () => {
  it("matches a hand-computed oracle", () => {
    const series = dailySeries(parseExport(CSV));
    expect(series).toEqual([
      { day: 0, min: 40.0, avg: 40.0, max: 40.0, visits: 1 },
      { day: 1, min: 41.0, avg: 42.0, max: 43.0, visits: 2 },
    ]);
  });

  it("fingerprint is stable", () => {
    const series = dailySeries(parseExport(CSV));
    expect(seriesFingerprint(series)).toBe("0:40.0/40.000/40.0/1;1:41.0/42.000/43.0/2");
  });
});
