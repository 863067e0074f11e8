"""Batch scoring engine and its web surface.

``ScoringEngine`` scores a group of rollouts against one target image
(parallel across rollouts, order-stable output) and attaches group
advantages when the group has at least two members. The FastAPI app wraps
it with three endpoints: POST /v1/score, POST /v1/advantages, GET
/v1/health. Renderer failures and embedding-backend outages are data in
the response, never 500s.
"""

from __future__ import annotations

import base64
import binascii
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import __version__ as ENGINE_VERSION
from .config import EngineConfig
from .embedding import EmbedderSpec
from .errors import (
    BackendUnavailable,
    BadRequest,
    DecodeFailure,
    GroupTooSmall,
    RenderRegistryEmpty,
)
from .grpo import RolloutGroup, group_advantages
from .imaging import ImageBuf, load_png
from .render import score_rollout
from .reward import alignment_reward, combined_reward

STATUS_BACKEND_UNAVAILABLE = "BackendUnavailable"


@dataclass
class RolloutSummary:
    combined: float
    visual_mean: float
    align: int
    status: str
    wall_time: float

    def as_dict(self) -> dict:
        return {
            "combined": self.combined,
            "visual_mean": self.visual_mean,
            "align": self.align,
            "status": self.status,
            "wall_time": self.wall_time,
        }


@dataclass
class BatchResult:
    per_rollout: list[RolloutSummary]
    advantages: Optional[list[float]]

    def as_dict(self) -> dict:
        body = {
            "per_rollout": [s.as_dict() for s in self.per_rollout],
            "engine_version": ENGINE_VERSION,
        }
        if self.advantages is not None:
            body["advantages"] = self.advantages
        return body


class ScoringEngine:
    def __init__(self, config: Optional[EngineConfig] = None):
        self.config = config or EngineConfig()

    def decode_target(
        self, image_b64: Optional[str] = None, image_path: Optional[str] = None
    ) -> ImageBuf:
        if (image_b64 is None) == (image_path is None):
            raise BadRequest("exactly one of image_b64 / image_path must be given")
        if image_b64 is not None:
            try:
                data = base64.b64decode(image_b64, validate=True)
            except (binascii.Error, ValueError) as exc:
                raise BadRequest(f"target image is not valid base64: {exc}") from exc
        else:
            try:
                data = Path(image_path).read_bytes()
            except OSError as exc:
                raise BadRequest(f"cannot read target image: {exc}") from exc
        try:
            img = load_png(data)
        except DecodeFailure as exc:
            raise BadRequest(f"target image is not a PNG: {exc}") from exc
        decoded = img.width * img.height * img.channels
        if decoded > self.config.max_image_bytes:
            raise BadRequest(
                f"decoded image is {decoded} bytes, cap is {self.config.max_image_bytes}"
            )
        return img

    def _score_one(self, target: ImageBuf, instruction: str, code: str, options: dict):
        cfg = self.config
        try:
            score = score_rollout(
                cfg.registry,
                options["embedder"],
                target,
                instruction,
                code,
                aliases=cfg.aliases,
                omega_v=options["omega_v"],
                omega_l=options["omega_l"],
                max_tiles=options["max_tiles"],
            )
        except BackendUnavailable:
            align = alignment_reward(instruction, code, cfg.aliases)
            return RolloutSummary(
                combined=combined_reward(
                    0.0, align, False, options["omega_v"], options["omega_l"]
                ),
                visual_mean=0.0,
                align=align,
                status=STATUS_BACKEND_UNAVAILABLE,
                wall_time=0.0,
            )
        b = score.breakdown
        return RolloutSummary(
            combined=b.combined,
            visual_mean=b.visual_mean,
            align=b.align,
            status=score.outcome.status,
            wall_time=score.outcome.wall_time,
        )

    def score_batch(
        self,
        target: ImageBuf,
        instruction: str,
        rollouts: list[str],
        omega_v: Optional[float] = None,
        omega_l: Optional[float] = None,
        max_tiles: Optional[int] = None,
        embedder: Optional[EmbedderSpec] = None,
    ) -> BatchResult:
        if not rollouts:
            raise BadRequest("rollouts must be non-empty")
        if len(self.config.registry) == 0:
            raise RenderRegistryEmpty("no renderers registered")
        options = {
            "omega_v": self.config.omega_v if omega_v is None else omega_v,
            "omega_l": self.config.omega_l if omega_l is None else omega_l,
            "max_tiles": self.config.max_tiles if max_tiles is None else max_tiles,
            "embedder": self.config.embedder if embedder is None else embedder,
        }
        workers = self.config.workers(len(rollouts))
        if workers == 1 or len(rollouts) == 1:
            summaries = [self._score_one(target, instruction, c, options) for c in rollouts]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                summaries = list(
                    pool.map(lambda c: self._score_one(target, instruction, c, options), rollouts)
                )
        advantages = None
        if len(summaries) >= 2:
            adv = group_advantages(RolloutGroup(tuple(s.combined for s in summaries)))
            advantages = list(adv.advantages)
        return BatchResult(per_rollout=summaries, advantages=advantages)


from pydantic import BaseModel, Field


class ScoreOptions(BaseModel):
    omega_v: Optional[float] = None
    omega_l: Optional[float] = None
    max_tiles: Optional[int] = None
    embedder: Optional[dict] = None

    def embedder_spec(self) -> Optional[EmbedderSpec]:
        if self.embedder is None:
            return None
        return EmbedderSpec(
            kind=self.embedder.get("kind", "reference"),
            dims=int(self.embedder.get("dims", 1024)),
            endpoint=self.embedder.get("endpoint"),
            timeout=float(self.embedder.get("timeout", 10.0)),
        )


class ScoreRequest(BaseModel):
    target_image_b64: Optional[str] = None
    target_image_path: Optional[str] = None
    instruction: str
    rollouts: list[str]
    options: Optional[ScoreOptions] = None


class AdvantageRequest(BaseModel):
    rewards: list[float]
    eps: float = Field(default=1e-6, gt=0)


def build_app(config: Optional[EngineConfig] = None):
    from fastapi import FastAPI, HTTPException

    engine = ScoringEngine(config)
    app = FastAPI(title="vizreward scoring service", version=ENGINE_VERSION)

    @app.post("/v1/score")
    def score(req: ScoreRequest):
        opts = req.options or ScoreOptions()
        try:
            target = engine.decode_target(req.target_image_b64, req.target_image_path)
            result = engine.score_batch(
                target,
                req.instruction,
                req.rollouts,
                omega_v=opts.omega_v,
                omega_l=opts.omega_l,
                max_tiles=opts.max_tiles,
                embedder=opts.embedder_spec(),
            )
        except (BadRequest, RenderRegistryEmpty, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return result.as_dict()

    @app.post("/v1/advantages")
    def advantages(req: AdvantageRequest):
        try:
            adv = group_advantages(RolloutGroup(tuple(req.rewards)), eps=req.eps)
        except (GroupTooSmall, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {
            "advantages": list(adv.advantages),
            "mean_reward": adv.mean_reward,
            "std_reward": adv.std_reward,
            "engine_version": ENGINE_VERSION,
        }

    @app.get("/v1/health")
    def health():
        cfg = engine.config
        return {
            "status": "ok",
            "engine_version": ENGINE_VERSION,
            "embedder": {
                "kind": cfg.embedder.kind,
                "dims": cfg.embedder.dims,
                "endpoint": cfg.embedder.endpoint,
            },
            "renderers": cfg.registry.languages(),
            "weights": {"visual": cfg.omega_v, "align": cfg.omega_l},
            "max_tiles": cfg.max_tiles,
        }

    return app
