"""Visual embedding backends and the pair-similarity score.

Two backends hide behind one ``EmbedderSpec``:

* ``reference`` - a deterministic 1024-dim descriptor computed in-process:
  the image is split into a fixed 8x8 spatial grid and every cell
  contributes an 8-bin intensity histogram plus an 8-bin gradient
  orientation histogram. Pure arithmetic, no model weights, bit-identical
  across runs.
* ``remote`` - a thin client for an embedding service speaking the
  ``POST /v1/embed`` wire contract (``{"image_png_b64": ...}`` in,
  ``{"dims": ..., "values": [...]}`` out). Vectors are re-normalized
  locally; wrong lengths raise, unreachable backends raise.

Pair score: (cos + 1) / 2, so identical images score 1 and antipodal
embeddings score 0.
"""

from __future__ import annotations

import base64
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np
import requests

from .errors import BackendUnavailable, DimensionMismatch
from .imaging import ImageBuf, encode_png, to_grayscale

REFERENCE_DIMS = 1024
_GRID = 8
_BINS = 8


@dataclass(frozen=True)
class EmbeddingVector:
    dims: int
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] != self.dims:
            raise DimensionMismatch(f"vector length {v.shape} != declared dims {self.dims}")
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"embedding not unit-norm: |v| = {norm}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str = "reference"  # "reference" | "remote"
    dims: int = REFERENCE_DIMS
    endpoint: Optional[str] = None
    timeout: float = 10.0
    max_inflight: int = 8  # cap on concurrent remote requests

    def __post_init__(self):
        if self.kind not in ("reference", "remote"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote embedder requires an endpoint")
        if self.dims < 1:
            raise ValueError("dims must be positive")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be positive")


class _EmbedCache:
    """Bounded in-memory memo keyed by (backend, image digest)."""

    def __init__(self, capacity: int = 4096):
        self.capacity = capacity
        self._data: OrderedDict[bytes, EmbeddingVector] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: bytes) -> Optional[EmbeddingVector]:
        with self._lock:
            vec = self._data.get(key)
            if vec is not None:
                self._data.move_to_end(key)
            return vec

    def put(self, key: bytes, vec: EmbeddingVector) -> None:
        with self._lock:
            self._data[key] = vec
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)


_cache = _EmbedCache()


def _reference_descriptor(img: ImageBuf) -> np.ndarray:
    gray = to_grayscale(img).samples[:, :, 0].astype(np.float64) / 255.0
    h, w = gray.shape

    if h >= 2 and w >= 2:
        gy, gx = np.gradient(gray)
    else:
        gy = np.zeros_like(gray)
        gx = np.zeros_like(gray)
    mag = np.hypot(gx, gy)
    orient = np.arctan2(gy, gx)  # [-pi, pi]

    int_bin = np.minimum((gray * _BINS).astype(np.intp), _BINS - 1)
    ori_bin = np.minimum(((orient + np.pi) / (2.0 * np.pi) * _BINS).astype(np.intp), _BINS - 1)

    row_cell = np.minimum((np.arange(h) * _GRID) // h, _GRID - 1)
    col_cell = np.minimum((np.arange(w) * _GRID) // w, _GRID - 1)
    cell = row_cell[:, None] * _GRID + col_cell[None, :]

    n_cells = _GRID * _GRID
    counts = np.bincount((cell * _BINS + int_bin).ravel(), minlength=n_cells * _BINS)
    grads = np.bincount(
        (cell * _BINS + ori_bin).ravel(), weights=mag.ravel(), minlength=n_cells * _BINS
    )
    cell_px = np.bincount(cell.ravel(), minlength=n_cells).astype(np.float64)
    cell_px[cell_px == 0] = 1.0

    int_hist = counts.reshape(n_cells, _BINS) / cell_px[:, None]
    grad_hist = grads.reshape(n_cells, _BINS) / cell_px[:, None]
    vec = np.concatenate([int_hist, grad_hist], axis=1).ravel()
    return vec / np.linalg.norm(vec)


_inflight_locks: dict[tuple[str, int], threading.BoundedSemaphore] = {}
_inflight_guard = threading.Lock()


def _inflight(spec: EmbedderSpec) -> threading.BoundedSemaphore:
    key = (spec.endpoint or "", spec.max_inflight)
    with _inflight_guard:
        sem = _inflight_locks.get(key)
        if sem is None:
            sem = threading.BoundedSemaphore(spec.max_inflight)
            _inflight_locks[key] = sem
        return sem


def _remote_descriptor(spec: EmbedderSpec, img: ImageBuf) -> np.ndarray:
    payload = {"image_png_b64": base64.b64encode(encode_png(img)).decode("ascii")}
    url = spec.endpoint.rstrip("/") + "/v1/embed"
    try:
        with _inflight(spec):
            resp = requests.post(url, json=payload, timeout=spec.timeout)
    except requests.RequestException as exc:
        raise BackendUnavailable(f"embed backend unreachable: {exc}") from exc
    if resp.status_code // 100 != 2:
        raise BackendUnavailable(f"embed backend returned HTTP {resp.status_code}")
    try:
        body = resp.json()
        values = np.asarray(body["values"], dtype=np.float64)
    except (ValueError, KeyError, TypeError) as exc:
        raise BackendUnavailable(f"embed backend sent malformed body: {exc}") from exc
    if values.ndim != 1 or values.shape[0] != spec.dims:
        raise DimensionMismatch(
            f"backend returned {values.shape[0] if values.ndim == 1 else values.shape} values, "
            f"declared dims {spec.dims}"
        )
    norm = float(np.linalg.norm(values))
    if norm == 0.0 or not np.isfinite(norm):
        raise BackendUnavailable("embed backend returned a degenerate vector")
    return values / norm


def embed(spec: EmbedderSpec, img: ImageBuf) -> EmbeddingVector:
    key = f"{spec.kind}|{spec.dims}|{spec.endpoint}".encode() + img.digest()
    hit = _cache.get(key)
    if hit is not None:
        return hit
    if spec.kind == "reference":
        values = _reference_descriptor(img)
    else:
        values = _remote_descriptor(spec, img)
    vec = EmbeddingVector(dims=spec.dims, values=values)
    _cache.put(key, vec)
    return vec


def cosine_sim(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dims != b.dims:
        raise DimensionMismatch(f"cosine over {a.dims}-d and {b.dims}-d vectors")
    return float(np.clip(np.dot(a.values, b.values), -1.0, 1.0))


def visual_pair_score(spec: EmbedderSpec, img_a: ImageBuf, img_b: ImageBuf) -> float:
    """Similarity of two images in [0, 1]: (cos of their embeddings + 1) / 2."""
    return 0.5 * (cosine_sim(embed(spec, img_a), embed(spec, img_b)) + 1.0)
