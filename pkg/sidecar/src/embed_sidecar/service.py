"""FastAPI app implementing the /v1/embed wire contract.

Request: {"image_png_b64": "<base64 PNG>"}; response: {"dims": int,
"values": [float]}. Undecodable payloads get 400; while the model is still
loading, or when the bounded work queue is saturated, requests get 503.
Model access is serialized so descriptors stay deterministic.
"""

from __future__ import annotations

import base64
import binascii
import threading
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import __version__
from .model import Embedder, ImageDecodeError, SidecarConfig

MAX_PENDING = 16


class EmbedRequest(BaseModel):
    image_png_b64: str


def build_app(config: Optional[SidecarConfig] = None) -> FastAPI:
    config = config or SidecarConfig()
    app = FastAPI(title="embed-sidecar", version=__version__)

    state = {"embedder": None, "error": None}
    load_lock = threading.Lock()
    infer_lock = threading.Lock()
    pending = threading.Semaphore(MAX_PENDING)

    def load():
        try:
            state["embedder"] = Embedder(config)
        except Exception as exc:  # surfaced on /v1/health and as 503 details
            state["error"] = str(exc)

    threading.Thread(target=load, daemon=True).start()

    def ready_embedder() -> Embedder:
        embedder = state["embedder"]
        if embedder is None:
            with load_lock:
                embedder = state["embedder"]
            if embedder is None:
                detail = state["error"] or "model is still loading"
                raise HTTPException(status_code=503, detail=detail)
        return embedder

    @app.post("/v1/embed")
    def embed(req: EmbedRequest):
        embedder = ready_embedder()
        if not pending.acquire(blocking=False):
            raise HTTPException(status_code=503, detail="queue saturated")
        try:
            try:
                data = base64.b64decode(req.image_png_b64, validate=True)
            except (binascii.Error, ValueError) as exc:
                raise HTTPException(status_code=400, detail=f"bad base64: {exc}") from exc
            try:
                with infer_lock:
                    values = embedder.embed(data)
            except ImageDecodeError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
            return {"dims": embedder.dims, "values": values.tolist()}
        finally:
            pending.release()

    @app.get("/v1/health")
    def health():
        embedder = state["embedder"]
        body = {
            "status": "ok" if embedder is not None else "loading",
            "version": __version__,
            "model": config.model,
            "pooling": "class-token",
            "preprocessing": "bilinear resize to native size, imagenet normalization",
        }
        if embedder is not None:
            body["dims"] = embedder.dims
            body["native_size"] = embedder.native_size
        if state["error"]:
            body["status"] = "error"
            body["error"] = state["error"]
        return body

    return app
