"""HTTP boundary for the telemetry server: ingestion, queries, CSV export
and trap-target control. JSON bodies; hex strings for radio payloads.

Mutating endpoints require the static operator token (X-Operator-Token
header). The console single-page app can be mounted at / by passing its
build directory.
"""

from __future__ import annotations

import os

from fastapi import Depends, FastAPI, Header, HTTPException, Query
from fastapi.responses import StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from feedstation.rfid import RangeError, TagId
from feedstation.server import FilterError, TelemetryServer, VisitFilter

DEFAULT_TOKEN = "let-me-feed"


class IngestBody(BaseModel):
    station_id: int
    payload_hex: str


class TrapTargetsBody(BaseModel):
    add: list[str] = Field(default_factory=list)
    remove: list[str] = Field(default_factory=list)
    master: bool | None = None


def create_app(server: TelemetryServer, token: str | None = None,
               console_dir: str | None = None) -> FastAPI:
    token = token or os.environ.get("FEEDSTATION_TOKEN", DEFAULT_TOKEN)
    app = FastAPI(title="feedstation telemetry")

    def require_token(x_operator_token: str | None = Header(default=None)) -> None:
        if x_operator_token != token:
            raise HTTPException(status_code=401, detail="bad operator token")

    def parse_tag(text: str) -> TagId:
        try:
            return TagId.parse(text)
        except RangeError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/ingest")
    def ingest(body: IngestBody):
        try:
            payload = bytes.fromhex(body.payload_hex)
        except ValueError:
            raise HTTPException(status_code=422, detail="payload_hex is not hex")
        result = server.ingest(body.station_id, payload)
        return {"ack": result.ack, "duplicate": result.duplicate,
                "downlinks_hex": [d.hex() for d in result.downlinks]}

    @app.get("/visits")
    def visits(station: int | None = None, tag: str | None = None,
               untagged: bool = False,
               t0: int | None = None, t1: int | None = None,
               wmin: float | None = None, wmax: float | None = None,
               max_std: float | None = None,
               limit: int = Query(default=100, le=1000),
               cursor: str | None = None):
        flt = VisitFilter(
            station_id=station,
            tag=parse_tag(tag) if tag else None,
            untagged_only=untagged,
            entry_after=t0, entry_before=t1,
            weight_min_g=wmin, weight_max_g=wmax, max_std_g=max_std)
        try:
            rows, next_cursor = server.query_visits(flt, limit=limit, cursor=cursor)
        except FilterError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"visits": [{
            "station_id": v.station_id, "seq": v.seq,
            "tag": str(v.tag) if v.tag else None,
            "entry_ts": v.entry_ts, "exit_ts": v.exit_ts,
            "weight_g": v.weight_grams, "std_g": v.std_grams,
            "received_ts": v.received_ts,
        } for v in rows], "next_cursor": next_cursor}

    @app.get("/export.csv")
    def export(station: int | None = None, tag: str | None = None,
               untagged: bool = False,
               t0: int | None = None, t1: int | None = None,
               wmin: float | None = None, wmax: float | None = None,
               max_std: float | None = None):
        flt = VisitFilter(
            station_id=station,
            tag=parse_tag(tag) if tag else None,
            untagged_only=untagged,
            entry_after=t0, entry_before=t1,
            weight_min_g=wmin, weight_max_g=wmax, max_std_g=max_std)
        try:
            flt.validate()
        except FilterError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return StreamingResponse(server.export_csv(flt), media_type="text/csv")

    @app.get("/status")
    def status():
        return {"stations": server.station_status(),
                "server_time": server.now()}

    @app.get("/captures")
    def captures(after_id: int = 0):
        return {"captures": server.captures(after_id)}

    @app.get("/stations/{station_id}/trap-targets")
    def get_targets(station_id: int):
        targets, master = server.target_set(station_id)
        return {"targets": sorted(str(t) for t in targets), "master": master}

    @app.post("/stations/{station_id}/trap-targets",
              dependencies=[Depends(require_token)])
    def set_targets(station_id: int, body: TrapTargetsBody):
        ops = [("add", parse_tag(t)) for t in body.add]
        ops += [("remove", parse_tag(t)) for t in body.remove]
        change_ts = server.set_trap_targets(station_id, ops, master=body.master)
        return {"ok": True, "change_ts": change_ts}

    @app.get("/stations/{station_id}/trap-delta")
    def trap_delta(station_id: int, last_updated: int = 0):
        from feedstation import codec
        updates = server.trap_delta(station_id, last_updated)
        return {"downlinks_hex": [codec.encode(u).hex() for u in updates]}

    if console_dir:
        app.mount("/", StaticFiles(directory=console_dir, html=True),
                  name="console")
    return app
