"""HTTP inference service.

JSON envelope over HTTP; images travel as base64 PNG. Sessions live in an
in-memory LRU map (optional JSONL persistence) and hold the uploaded image,
mask, cached encoder output, current seed and the cumulative edit list.
Model weights are shared read-only; per-session operations serialize on a
per-session lock.
"""

from __future__ import annotations

import base64
import io
import json
import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from .corpus import image_to_uint8, uint8_to_image
from .editing import DirectionBank


class ApiError(Exception):
    """Service error with one canonical code."""

    STATUS = {
        "bad_image": 400,
        "bad_mask": 400,
        "no_checkpoint": 503,
        "unknown_session": 404,
        "unknown_direction": 404,
        "internal": 500,
    }

    def __init__(self, code: str, message: str):
        assert code in self.STATUS, code
        super().__init__(message)
        self.code = code
        self.message = message


def png_to_image(b64: str, resolution: int) -> torch.Tensor:
    try:
        raw = base64.b64decode(b64, validate=True)
        pil = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception as exc:
        raise ApiError("bad_image", f"could not decode image PNG: {exc}") from exc
    if pil.size != (resolution, resolution):
        raise ApiError("bad_image", f"expected {resolution}x{resolution} image, got {pil.size[0]}x{pil.size[1]}")
    return torch.from_numpy(uint8_to_image(np.asarray(pil)))


def png_to_mask(b64: str, resolution: int) -> torch.Tensor:
    try:
        raw = base64.b64decode(b64, validate=True)
        pil = Image.open(io.BytesIO(raw)).convert("L")
    except Exception as exc:
        raise ApiError("bad_mask", f"could not decode mask PNG: {exc}") from exc
    if pil.size != (resolution, resolution):
        raise ApiError("bad_mask", f"expected {resolution}x{resolution} mask, got {pil.size[0]}x{pil.size[1]}")
    arr = np.asarray(pil)
    if not np.all(np.isin(np.unique(arr), [0, 1, 255])):
        raise ApiError("bad_mask", "mask PNG is not binary (expected values 0 and 255)")
    return torch.from_numpy(((arr > 127) | (arr == 1)).astype(np.float32)).unsqueeze(0)


def image_to_png(img: torch.Tensor) -> str:
    buf = io.BytesIO()
    Image.fromarray(image_to_uint8(img.detach().cpu().numpy())).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


@dataclass
class Session:
    id: str
    image: torch.Tensor
    mask: torch.Tensor
    w_enc: torch.Tensor
    seed: int
    edits: list = field(default_factory=list)
    created: float = field(default_factory=time.time)
    updated: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def summary(self) -> dict:
        return {
            "session_id": self.id,
            "seed": self.seed,
            "edits": [{"direction": n, "strength": s} for n, s in self.edits],
            "created": self.created,
            "updated": self.updated,
        }


class SessionStore:
    """LRU map of sessions with optional append-only persistence."""

    def __init__(self, cap: int = 64, persist_path: Optional[str] = None):
        self.cap = cap
        self.persist_path = Path(persist_path) if persist_path else None
        self._sessions: OrderedDict[str, Session] = OrderedDict()
        self._lock = threading.Lock()

    def put(self, session: Session) -> None:
        with self._lock:
            self._sessions[session.id] = session
            self._sessions.move_to_end(session.id)
            while len(self._sessions) > self.cap:
                self._sessions.popitem(last=False)

    def get(self, session_id: str) -> Session:
        with self._lock:
            if session_id not in self._sessions:
                raise ApiError("unknown_session", f"no session {session_id!r}")
            self._sessions.move_to_end(session_id)
            return self._sessions[session_id]

    def persist(self, session: Session) -> None:
        if not self.persist_path:
            return
        record = {
            "id": session.id,
            "seed": session.seed,
            "edits": session.edits,
            "created": session.created,
            "updated": session.updated,
            "image": image_to_png(session.image),
            "mask": image_to_png(session.mask.expand(3, -1, -1) * 2 - 1),
        }
        with self._lock:
            with open(self.persist_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")


def restore_sessions(store: SessionStore, pipeline) -> int:
    """Replay a persistence file; the last record per session wins."""
    if not store.persist_path or not store.persist_path.exists():
        return 0
    latest: dict[str, dict] = {}
    for line in store.persist_path.read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            latest[rec["id"]] = rec
    for rec in latest.values():
        resolution = pipeline.model_cfg.resolution
        image = png_to_image(rec["image"], resolution)
        mask_rgb = png_to_image(rec["mask"], resolution)
        mask = ((mask_rgb[:1] + 1) / 2 > 0.5).float()
        session = Session(
            id=rec["id"],
            image=image,
            mask=mask,
            w_enc=pipeline.encode(image[None], mask[None])[0],
            seed=rec["seed"],
            edits=[tuple(e) for e in rec["edits"]],
            created=rec["created"],
            updated=rec["updated"],
        )
        store.put(session)
    return len(latest)


class CreateSessionBody(BaseModel):
    image: str
    mask: str
    seed: Optional[int] = None


class ResampleBody(BaseModel):
    seed: Optional[int] = None


class EditBody(BaseModel):
    direction: str
    strength: float


def create_app(
    pipeline=None,
    directions: Optional[DirectionBank] = None,
    session_cap: int = 64,
    persist_path: Optional[str] = None,
    checkpoint_path: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="latentfill")
    store = SessionStore(session_cap, persist_path)
    directions = directions or DirectionBank()
    seed_rng = np.random.default_rng()
    if pipeline is not None:
        restore_sessions(store, pipeline)

    def require_pipeline():
        if pipeline is None:
            raise ApiError("no_checkpoint", "service started without a checkpoint")
        return pipeline

    def render(session: Session) -> torch.Tensor:
        pipe = require_pipeline()
        edits = [(directions.get(name), strength) for name, strength in session.edits]
        result = pipe.complete(
            session.image[None],
            session.mask[None],
            z=pipe.sample_z(1, seed=session.seed),
            w_enc=session.w_enc[None],
            edits=edits,
        )
        return result.final[0]

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=ApiError.STATUS[exc.code],
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    @app.exception_handler(Exception)
    async def handle_internal(request: Request, exc: Exception):
        return JSONResponse(
            status_code=500,
            content={"error": {"code": "internal", "message": str(exc)}},
        )

    @app.get("/healthz")
    def healthz():
        if pipeline is None:
            return {"status": "no_checkpoint"}
        return {
            "status": "ok",
            "stage": pipeline.stage,
            "resolution": pipeline.model_cfg.resolution,
            "checkpoint": checkpoint_path,
        }

    @app.get("/directions")
    def list_directions():
        return {"directions": directions.names()}

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        pipe = require_pipeline()
        resolution = pipe.model_cfg.resolution
        image = png_to_image(body.image, resolution)
        mask = png_to_mask(body.mask, resolution)
        seed = int(body.seed) if body.seed is not None else int(seed_rng.integers(0, 2**31 - 1))
        session = Session(
            id=uuid.uuid4().hex,
            image=image,
            mask=mask,
            w_enc=pipe.encode(image[None], mask[None])[0],
            seed=seed,
        )
        with session.lock:
            composite = render(session)
            store.put(session)
            store.persist(session)
            return {
                "session_id": session.id,
                "seed": session.seed,
                "image": image_to_png(composite),
                "erased_ratio": float(1.0 - session.mask.mean()),
            }

    @app.post("/sessions/{session_id}/resample")
    def resample(session_id: str, body: ResampleBody):
        session = store.get(session_id)
        with session.lock:
            session.seed = int(body.seed) if body.seed is not None else int(seed_rng.integers(0, 2**31 - 1))
            session.updated = time.time()
            composite = render(session)
            store.persist(session)
            return {"session_id": session.id, "seed": session.seed, "image": image_to_png(composite)}

    @app.post("/sessions/{session_id}/edit")
    def edit(session_id: str, body: EditBody):
        session = store.get(session_id)
        if body.direction not in directions:
            raise ApiError("unknown_direction", f"no direction {body.direction!r}")
        with session.lock:
            session.edits.append((body.direction, float(body.strength)))
            session.updated = time.time()
            composite = render(session)
            store.persist(session)
            return {
                "session_id": session.id,
                "image": image_to_png(composite),
                "edits": [{"direction": n, "strength": s} for n, s in session.edits],
            }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        session = store.get(session_id)
        summary = session.summary()
        summary["erased_ratio"] = float(1.0 - session.mask.mean())
        return summary

    return app
