"""Command line entry point: station replay/simulation, the telemetry
server, scenario runs, tag-frame tools and the core benchmark."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import random
import sys
import urllib.request

from feedstation import codec, simharness
from feedstation.rfid import FdxbFrame, TagId, decode_frame, encode_frame
from feedstation.simharness import (GeneratedTrace, Scenario, TraceParseError,
                                    VirtualClock, drive_station, generate_trace,
                                    load_detections, load_trace, parse_scenario,
                                    run_scenario, score_against_truth)
from feedstation.station import Station, StationConfig


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s")


def _write_report(report, path: str | None) -> None:
    text = report.to_text() + "\n\n" + "\n".join(report.to_lines()) + "\n"
    if path:
        with open(path, "w") as f:
            f.write(text)
    print(report.to_text())


def cmd_simulate(args) -> int:
    scenario = parse_scenario(args.scenario)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    report = run_scenario(scenario)
    _write_report(report, args.report)
    return 0


def cmd_replay(args) -> int:
    try:
        report = simharness.replay(args.trace, rfid_path=args.rfid, seed=args.seed)
    except TraceParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    _write_report(report, args.report)
    return 0


class HttpLink:
    """Synchronous bridge: queue transmissions go to POST /ingest; the ack
    confirms the entry and piggybacked downlinks come back."""

    def __init__(self, base_url: str, station_id: int) -> None:
        self.base_url = base_url.rstrip("/")
        self.station_id = station_id

    def exchange(self, payload: bytes) -> tuple[bool, list[bytes]]:
        body = json.dumps({"station_id": self.station_id,
                           "payload_hex": payload.hex()}).encode()
        req = urllib.request.Request(
            self.base_url + "/ingest", data=body,
            headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=10) as resp:
            data = json.loads(resp.read())
        return data["ack"], [bytes.fromhex(h) for h in data["downlinks_hex"]]


def _run_against_http(station: Station, samples, passes, p_detect: float,
                      end_ms: int, link: HttpLink, seed: int) -> None:
    from feedstation import rfid as rfid_mod
    rng = random.Random(seed)
    static = [(t, 0, "sample", g) for t, g in samples]
    static += [(p.t_ms, 1, "pass", p.tag) for p in passes]
    static.sort()

    def service(now: int) -> None:
        while True:
            wakeup = station.next_wakeup(now)
            if wakeup is None or wakeup > now:
                return
            for tx in station.on_clock(wakeup):
                ack, downlinks = link.exchange(tx.payload)
                if ack:
                    station.queue.confirm(tx.seq)
                    for dl in downlinks:
                        station.handle_downlink(dl)

    for t, _, kind, data in static:
        service(t)
        if kind == "sample":
            station.handle_sample(t, data)
        else:
            det = rfid_mod.simulate_pass(data, p_detect, rng, ts=t,
                                         station_id=station.config.station_id)
            if det is not None:
                station.handle_detection(det)
    service(end_ms)
    station.flush(end_ms)
    now = end_ms
    while station.queue.depth > 0:
        now = max(station.queue.next_wakeup(now) or now, now + 1)
        for tx in station.queue.pump(now):
            ack, downlinks = link.exchange(tx.payload)
            if ack:
                station.queue.confirm(tx.seq)
                for dl in downlinks:
                    station.handle_downlink(dl)


def cmd_station_run(args) -> int:
    _setup_logging(args.verbose)
    config = StationConfig.from_file(args.config) if args.config else StationConfig()
    if args.trace == "live-sim":
        scenario = parse_scenario(args.scenario) if args.scenario else Scenario(
            seed=args.seed, duration_s=120.0,
            animals=(simharness.AnimalScript(
                TagId(756, 1), 41.0, (simharness.VisitPlan(10.0, 30.0),)),))
        trace = generate_trace(scenario, random.Random(scenario.seed))
        samples, passes = trace.samples, trace.passes
        p_detect = scenario.p_detect
        end_ms = int(scenario.duration_s * 1000)
        truth = trace.truth
    else:
        samples = load_trace(args.trace)
        passes = []
        p_detect = 1.0
        end_ms = samples[-1][0] + 1000 if samples else 0
        truth = []
        if args.rfid:
            for det in load_detections(args.rfid, config.station_id):
                passes.append(simharness.PassEvent(det.ts, det.tag))

    station = Station(config)
    if args.server_url:
        link = HttpLink(args.server_url, config.station_id)
        _run_against_http(station, samples, passes, p_detect, end_ms, link,
                          args.seed)
        print(f"visits emitted: {len(station.visits_emitted)}")
        for v in station.visits_emitted:
            print(f"  {v.tag or 'untagged'} entry={v.entry_ts}ms "
                  f"weight={v.weight_grams:.1f}g std={v.quality_std_grams:.2f}g")
        print(f"captures: {len(station.captures)}")
        print(f"queue: {station.queue.metrics}")
        return 0
    # Fully in-process: deterministic station + link + server.
    from feedstation.server import TelemetryServer
    clock = VirtualClock()
    server = TelemetryServer(":memory:", clock=clock.seconds)
    scenario_like = Scenario(seed=args.seed, duration_s=end_ms / 1000.0 + 1,
                             link=config.link)
    gen = GeneratedTrace(samples=samples, passes=passes, truth=truth)
    stats = drive_station(station, server, clock, gen, scenario_like,
                          random.Random(args.seed), end_ms=end_ms)
    report = score_against_truth(server, config.station_id, truth, stats,
                                 enqueued=station.queue.metrics.enqueued)
    _write_report(report, args.report)
    server.close()
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from feedstation.api import create_app
    from feedstation.server import TelemetryServer
    _setup_logging(args.verbose)
    server = TelemetryServer(args.db)
    app = create_app(server, token=args.token, console_dir=args.console)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_fdxb(args) -> int:
    if args.action == "encode":
        frame = encode_frame(TagId.parse(args.value))
        print(frame.to_hex())
    else:
        decoded = decode_frame(FdxbFrame.from_hex(args.value))
        print(f"tag={decoded.tag} animal={decoded.animal} "
              f"data_block={decoded.data_block}")
    return 0


def cmd_bench(args) -> int:
    from feedstation import bench
    bench.main()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feedstation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario end to end")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="replay a recorded weight trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--rfid", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_replay)

    station = sub.add_parser("station", help="station daemon tools")
    station_sub = station.add_subparsers(dest="station_command", required=True)
    p = station_sub.add_parser("run", help="run the station deterministically")
    p.add_argument("--config", default=None)
    p.add_argument("--trace", required=True, help="trace file or 'live-sim'")
    p.add_argument("--rfid", default=None)
    p.add_argument("--scenario", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true", default=True)
    p.add_argument("--server-url", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_station_run)

    p = sub.add_parser("serve", help="run the telemetry HTTP server")
    p.add_argument("--db", default="feedstation.sqlite")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8800)
    p.add_argument("--token", default=None)
    p.add_argument("--console", default=None, help="console build directory")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("fdxb", help="tag frame tools")
    p.add_argument("action", choices=["encode", "decode"])
    p.add_argument("value", help="tag CCC_NNNNNNNNNNNN or 32 hex chars")
    p.set_defaults(func=cmd_fdxb)

    p = sub.add_parser("bench", help="compare compiled and pure-Python kernels")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
