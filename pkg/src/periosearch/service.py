"""HTTP shell around the search engine.

A FastAPI app over one immutable snapshot (model, fingerprint, index,
lexicon, corpus root). Handlers read the snapshot reference exactly once per
request, so swapping a freshly loaded snapshot in is atomic: requests in
flight finish on the index they started with, and nothing ever mutates an
index in place. Every error body carries a machine-readable ``code`` next
to the human-readable message.

Research tool for trusted networks: single process, no auth, no TLS.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import augment
from . import encoders as enc
from . import evaluation as ev
from . import retrieval as rt

DEFAULT_K = 3
MAX_K = 20


class ServiceConfigError(ValueError):
    """A service setting is out of range or points nowhere."""


@dataclass
class ServiceConfig:
    checkpoint: Path
    index_base: Path
    data_dir: Path
    host: str = "127.0.0.1"
    port: int = 8000
    max_k: int = MAX_K
    timeout_seconds: float = 30.0
    static_dir: Path | None = None

    def __post_init__(self):
        self.checkpoint = Path(self.checkpoint)
        self.index_base = Path(self.index_base)
        self.data_dir = Path(self.data_dir)
        if self.max_k < 1:
            raise ServiceConfigError(f"max_k must be >= 1, got {self.max_k}")
        if self.timeout_seconds <= 0:
            raise ServiceConfigError(
                f"timeout_seconds must be positive, got {self.timeout_seconds}"
            )
        if not self.checkpoint.is_file():
            raise ServiceConfigError(f"checkpoint not found: {self.checkpoint}")
        for suffix in (".bin", ".tsv"):
            part = self.index_base.with_suffix(suffix)
            if not part.is_file():
                raise ServiceConfigError(f"index file not found: {part}")
        if not self.data_dir.is_dir():
            raise ServiceConfigError(f"data directory not found: {self.data_dir}")


@dataclass(frozen=True)
class Snapshot:
    """Everything one request needs, loaded once and never mutated."""

    model: enc.DualEncoder
    fingerprint: str
    index: rt.EmbeddingIndex
    lexicon: augment.SynonymLexicon
    root: Path


def load_snapshot(config: ServiceConfig) -> Snapshot:
    """Read the checkpoint and the persisted index; refuse mismatched pairs."""
    model, fingerprint = rt.load_model(config.checkpoint)
    index = rt.EmbeddingIndex.load(config.index_base)
    if index.fingerprint != fingerprint:
        raise rt.FingerprintError("index was built from a different checkpoint")
    lexicon = augment.SynonymLexicon.load(config.data_dir / "lexicon.txt")
    return Snapshot(model, fingerprint, index, lexicon, config.data_dir)


def record_summary(record) -> str:
    return (
        f"stage {record.stage}, {record.region}, "
        f"{record.age}-year-old {record.ethnicity} {record.gender}"
    )


class QueryRequest(BaseModel):
    text: str
    k: int = DEFAULT_K


def _fail(status: int, code: str, message: str):
    raise HTTPException(status, detail={"code": code, "message": message})


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    """The service app. Without a config it starts empty (health reports not
    ready, queries get 503) until ``swap_snapshot`` hands it an index."""
    app = FastAPI(title="periosearch")
    app.state.config = config
    app.state.snapshot = load_snapshot(config) if config is not None else None
    app.state.started = time.time()

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        where = ".".join(str(p) for p in first.get("loc", ()))
        return JSONResponse(
            status_code=400,
            content={
                "detail": {
                    "code": "malformed_body",
                    "message": f"{where}: {first.get('msg', 'invalid request')}",
                }
            },
        )

    @app.post("/api/query")
    def http_query(body: QueryRequest, request: Request):
        snap: Snapshot | None = request.app.state.snapshot
        if snap is None or snap.index.size == 0:
            _fail(503, "not_ready", "no index loaded")
        started = time.perf_counter()
        if body.k < 1:
            _fail(400, "bad_argument", f"k must be >= 1, got {body.k}")
        cfg = request.app.state.config
        k = min(body.k, cfg.max_k if cfg else MAX_K, snap.index.size)
        try:
            parsed = ev.parse_query(body.text, snap.lexicon)
            ranked = rt.query(
                body.text, k, snap.index, snap.model, fingerprint=snap.fingerprint
            )
        except ev.QueryParseError as e:
            _fail(422, "unparseable_query", str(e))
        except rt.ArgumentError as e:
            _fail(400, "bad_argument", str(e))
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        return {
            "results": [
                {
                    "id": rid,
                    "score": score,
                    "image_url": f"/api/image/{rid}",
                    "summary": record_summary(snap.index.records[rid]),
                }
                for rid, score in ranked.items
            ],
            "tier": parsed.tier,
            "elapsed_ms": elapsed_ms,
        }

    @app.api_route("/api/image/{image_id}", methods=["GET", "HEAD"])
    def http_image(image_id: int, request: Request):
        snap: Snapshot | None = request.app.state.snapshot
        if snap is None:
            _fail(503, "not_ready", "no index loaded")
        record = snap.index.records.get(image_id)
        if record is None:
            _fail(404, "unknown_image", f"image {image_id} is not in the index")
        return FileResponse(
            snap.root / record.image_path,
            media_type="image/png",
            headers={"Cache-Control": "public, max-age=31536000, immutable"},
        )

    @app.get("/api/health")
    def http_health(request: Request):
        snap: Snapshot | None = request.app.state.snapshot
        return {
            "ready": snap is not None,
            "size": snap.index.size if snap is not None else 0,
            "fingerprint": snap.fingerprint if snap is not None else "",
            "uptime_seconds": time.time() - request.app.state.started,
        }

    static = config.static_dir if config is not None else None
    if static is not None and Path(static).is_dir():
        app.mount("/", StaticFiles(directory=static, html=True), name="ui")
    else:

        @app.get("/", include_in_schema=False)
        def home():
            return {
                "service": "periosearch",
                "endpoints": ["/api/query", "/api/image/{id}", "/api/health"],
            }

    return app


def swap_snapshot(app: FastAPI, config: ServiceConfig) -> Snapshot:
    """Load a new (checkpoint, index) pair and swap it in. The assignment is
    a single reference write, so concurrent requests see either the old
    snapshot or the new one, never a mixture."""
    snapshot = load_snapshot(config)
    app.state.config = config
    app.state.snapshot = snapshot
    return snapshot


def serve(config: ServiceConfig) -> None:
    """Run the app under uvicorn until interrupted."""
    import uvicorn

    uvicorn.run(
        create_app(config),
        host=config.host,
        port=config.port,
        timeout_keep_alive=int(config.timeout_seconds),
    )
