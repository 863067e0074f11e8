"""Sandboxed rendering of candidate code through external command adapters.

Adapters are plain subprocess commands with ``{input}`` and ``{output}``
placeholders: the engine writes the code to a fresh temp dir, runs the
command with a wall-clock timeout, and reads one PNG back. Every failure
mode (timeout, nonzero exit, missing/undecodable output) is encoded in the
outcome status rather than raised, so a scoring loop never dies on a bad
rollout. The built-in copy/identity adapters exist for tests and for
desk-scale loop simulation: their "code" payload is the image itself.
"""

from __future__ import annotations

import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from . import reward as reward_mod
from .embedding import EmbedderSpec
from .errors import DecodeFailure, DuplicateLanguage, InvalidTemplate, UnknownLanguage
from .imaging import ImageBuf, load_png
from .reward import AliasTable, RewardBreakdown

STDERR_TAIL_CHARS = 2000
DEFAULT_TIMEOUT = 30.0

STATUS_SUCCESS = "Success"
STATUS_TIMEOUT = "Timeout"
STATUS_EXIT_FAILURE = "ExitFailure"
STATUS_NO_OUTPUT = "NoOutput"


@dataclass(frozen=True)
class RendererConfig:
    language: str
    command: tuple[str, ...]
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if self.timeout <= 0:
            raise InvalidTemplate("timeout must be positive")
        joined = "\x00".join(self.command)
        for placeholder in ("{input}", "{output}"):
            n = joined.count(placeholder)
            if n != 1:
                raise InvalidTemplate(
                    f"command template must contain {placeholder} exactly once, found {n}"
                )
        object.__setattr__(self, "command", tuple(self.command))


@dataclass(frozen=True)
class RenderOutcome:
    status: str
    image: Optional[ImageBuf]
    stderr_tail: str
    wall_time: float

    def __post_init__(self):
        if (self.status == STATUS_SUCCESS) != (self.image is not None):
            raise ValueError("image must be present iff status is Success")

    @property
    def ok(self) -> bool:
        return self.status == STATUS_SUCCESS


@dataclass
class RolloutScore:
    breakdown: RewardBreakdown
    outcome: RenderOutcome
    language: Optional[str] = None


class RendererRegistry:
    """Immutable-after-setup map from canonical language to adapter config."""

    def __init__(self):
        self._configs: dict[str, RendererConfig] = {}

    def register(self, cfg: RendererConfig) -> "RendererRegistry":
        if cfg.language in self._configs:
            raise DuplicateLanguage(f"renderer for {cfg.language!r} already registered")
        self._configs[cfg.language] = cfg
        return self

    def get(self, language: str) -> RendererConfig:
        try:
            return self._configs[language]
        except KeyError:
            raise UnknownLanguage(f"no renderer registered for {language!r}") from None

    def languages(self) -> list[str]:
        return sorted(self._configs)

    def __contains__(self, language: str) -> bool:
        return language in self._configs

    def __len__(self) -> int:
        return len(self._configs)


def copy_renderer(language: str = "copy", timeout: float = DEFAULT_TIMEOUT) -> RendererConfig:
    """Adapter that copies the input bytes verbatim to the output PNG."""
    return RendererConfig(
        language=language,
        command=(
            sys.executable,
            "-c",
            "import shutil,sys;shutil.copyfile(sys.argv[1],sys.argv[2])",
            "{input}",
            "{output}",
        ),
        timeout=timeout,
    )


def b64_renderer(language: str = "identity", timeout: float = DEFAULT_TIMEOUT) -> RendererConfig:
    """Adapter whose code payload is a base64 PNG; lets image bytes travel in fenced text."""
    return RendererConfig(
        language=language,
        command=(
            sys.executable,
            "-c",
            "import base64,sys;"
            "open(sys.argv[2],'wb').write(base64.b64decode(open(sys.argv[1],'rb').read()))",
            "{input}",
            "{output}",
        ),
        timeout=timeout,
    )


def _tail(data: bytes) -> str:
    text = data.decode("utf-8", errors="replace")
    return text[-STDERR_TAIL_CHARS:]


def render(registry: RendererRegistry, language: str, code: Union[str, bytes]) -> RenderOutcome:
    """Run the adapter for ``language`` on ``code`` in a fresh temp dir."""
    cfg = registry.get(language)
    tmpdir = Path(tempfile.mkdtemp(prefix="vizreward-render-"))
    in_path = tmpdir / "input.src"
    out_path = tmpdir / "output.png"
    data = code if isinstance(code, bytes) else code.encode("utf-8")
    start = time.perf_counter()
    try:
        in_path.write_bytes(data)
        argv = [
            tok.replace("{input}", str(in_path)).replace("{output}", str(out_path))
            for tok in cfg.command
        ]
        try:
            proc = subprocess.run(
                argv, cwd=tmpdir, capture_output=True, timeout=cfg.timeout
            )
        except subprocess.TimeoutExpired as exc:
            return RenderOutcome(
                status=STATUS_TIMEOUT,
                image=None,
                stderr_tail=_tail(exc.stderr or b""),
                wall_time=time.perf_counter() - start,
            )
        wall = time.perf_counter() - start
        stderr = _tail(proc.stderr or b"")
        if proc.returncode != 0:
            return RenderOutcome(
                status=STATUS_EXIT_FAILURE, image=None, stderr_tail=stderr, wall_time=wall
            )
        if not out_path.exists():
            return RenderOutcome(
                status=STATUS_NO_OUTPUT, image=None, stderr_tail=stderr, wall_time=wall
            )
        try:
            img = load_png(out_path.read_bytes())
        except DecodeFailure as exc:
            return RenderOutcome(
                status=STATUS_NO_OUTPUT,
                image=None,
                stderr_tail=(stderr + f"\n[output not decodable as PNG: {exc}]").strip(),
                wall_time=wall,
            )
        return RenderOutcome(status=STATUS_SUCCESS, image=img, stderr_tail=stderr, wall_time=wall)
    finally:
        shutil.rmtree(tmpdir, ignore_errors=True)


def _failure_outcome(message: str) -> RenderOutcome:
    return RenderOutcome(
        status=STATUS_EXIT_FAILURE, image=None, stderr_tail=message, wall_time=0.0
    )


def score_rollout(
    registry: RendererRegistry,
    spec: EmbedderSpec,
    target: ImageBuf,
    instruction: str,
    code: str,
    aliases: Optional[AliasTable] = None,
    omega_v: float = reward_mod.DEFAULT_VISUAL_WEIGHT,
    omega_l: float = reward_mod.DEFAULT_ALIGN_WEIGHT,
    max_tiles: int = 12,
) -> RolloutScore:
    """Full per-rollout leg: alignment, render, coarse-to-fine score, blend.

    The fence language picks the renderer (instruction language is the
    fallback); the alignment reward separately penalizes any mismatch.
    Never raises on rollout defects: unknown languages and missing fences
    become failure outcomes.
    """
    aliases = aliases or AliasTable()
    align = reward_mod.alignment_reward(instruction, code, aliases)
    target_lang = reward_mod.parse_instruction_language(instruction, aliases)

    fence = reward_mod.extract_code_fence(code)
    if fence is not None:
        language = reward_mod.fence_language(fence[0], aliases, target=target_lang)
        body = fence[1]
    else:
        language = target_lang
        body = code

    if language is None:
        outcome = _failure_outcome("no code fence and no target language in instruction")
    elif language not in registry:
        outcome = _failure_outcome(f"no renderer registered for {language!r}")
    else:
        outcome = render(registry, language, body)

    if outcome.ok:
        breakdown = reward_mod.coarse_to_fine_reward(spec, target, outcome.image, max_tiles)
        breakdown.render_ok = True
    else:
        breakdown = RewardBreakdown(
            tile_scores=[], thumb_score=0.0, visual_mean=0.0, render_ok=False
        )
    breakdown.align = align
    breakdown.combined = reward_mod.combined_reward(
        breakdown.visual_mean, align, outcome.ok, omega_v, omega_l
    )
    return RolloutScore(breakdown=breakdown, outcome=outcome, language=language)
