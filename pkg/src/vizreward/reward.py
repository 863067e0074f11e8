"""Reward composition: coarse-to-fine visual score, language alignment, weighted blend.

The visual reward compares a rendered image against its target over every
448x448 tile of the target-sized canvas plus one global thumbnail, and
averages all of those pair scores. The alignment reward is a binary check
that the generated code fence declares the language the instruction asked
for, resolved through an alias table (e.g. ``tikz`` counts as ``latex``).
The combined scalar is ``w_v * visual + w_l * align`` with the visual term
forced to zero when rendering failed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import tiling
from .embedding import EmbedderSpec, visual_pair_score
from .imaging import ImageBuf, resize

DEFAULT_VISUAL_WEIGHT = 0.9
DEFAULT_ALIGN_WEIGHT = 0.1

# tag -> canonical; canonical names map to themselves.
_DEFAULT_ALIASES = {
    "python": "python",
    "py": "python",
    "python3": "python",
    "latex": "latex",
    "tex": "latex",
    "tikz": "latex",
    "html": "html",
    "htm": "html",
    "javascript": "javascript",
    "js": "javascript",
    "svg": "svg",
    "xml": "xml",
    "mermaid": "mermaid",
    "asymptote": "asymptote",
}

# (tag, requested target) -> canonical, applied before the flat table.
_DEFAULT_CONTEXTUAL = {("xml", "svg"): "svg"}


@dataclass(frozen=True)
class AliasTable:
    mapping: dict = field(default_factory=lambda: dict(_DEFAULT_ALIASES))
    contextual: dict = field(default_factory=lambda: dict(_DEFAULT_CONTEXTUAL))

    def __post_init__(self):
        for canon in self.mapping.values():
            if self.mapping.get(canon) != canon:
                raise ValueError(f"canonical name {canon!r} must map to itself")

    def resolve(self, tag: str, target: Optional[str] = None) -> str:
        tag = tag.strip().lower()
        if target is not None and (tag, target) in self.contextual:
            return self.contextual[(tag, target)]
        return self.mapping.get(tag, tag)

    def keywords(self) -> list[str]:
        kws = set(self.mapping) | set(self.mapping.values())
        kws |= {t for t, _ in self.contextual}
        return sorted(kws, key=len, reverse=True)

    @classmethod
    def from_file(cls, path) -> "AliasTable":
        """Load ``alias=canonical`` lines; '#' starts a comment."""
        mapping = {}
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad alias line: {raw!r}")
            alias, canon = (part.strip().lower() for part in line.split("=", 1))
            mapping[alias] = canon
        for canon in set(mapping.values()):
            mapping.setdefault(canon, canon)
        return cls(mapping=mapping)


@dataclass
class RewardBreakdown:
    tile_scores: list[float]
    thumb_score: float
    visual_mean: float
    align: int = 0
    combined: float = 0.0
    render_ok: bool = True


class _TileCache:
    """Small LRU over computed tile sets; repeated targets dominate batches."""

    def __init__(self, capacity: int = 8):
        import threading
        from collections import OrderedDict

        self.capacity = capacity
        self._data = OrderedDict()
        self._lock = threading.Lock()

    def tiles(self, img: ImageBuf, plan) -> "tiling.TileSet":
        key = img.digest() + f"|{plan.rows}x{plan.cols}".encode()
        with self._lock:
            hit = self._data.get(key)
            if hit is not None:
                self._data.move_to_end(key)
                return hit
        ts = tiling.split_tiles(img, plan)
        with self._lock:
            self._data[key] = ts
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)
        return ts


_tile_cache = _TileCache()


def coarse_to_fine_reward(
    spec: EmbedderSpec,
    target: ImageBuf,
    rendered: ImageBuf,
    max_tiles: int = tiling.DEFAULT_MAX_TILES,
) -> RewardBreakdown:
    """Visual fields only; align/combined are filled in by the caller."""
    rendered = resize(rendered, target.width, target.height)
    plan = tiling.plan_grid(target.width, target.height, max_tiles)
    target_tiles = _tile_cache.tiles(target, plan)
    rendered_tiles = _tile_cache.tiles(rendered, plan)

    tile_scores = [
        visual_pair_score(spec, t, r)
        for t, r in zip(target_tiles.tiles, rendered_tiles.tiles)
    ]
    thumb_score = visual_pair_score(spec, target_tiles.thumbnail, rendered_tiles.thumbnail)
    visual_mean = (sum(tile_scores) + thumb_score) / (len(tile_scores) + 1)
    return RewardBreakdown(
        tile_scores=tile_scores,
        thumb_score=thumb_score,
        visual_mean=visual_mean,
    )


_FENCE_OPEN = re.compile(r"^\s*```(.*)$")
_FENCE_CLOSE = re.compile(r"^\s*```\s*$")


def extract_code_fence(text: str) -> Optional[tuple[str, str]]:
    """First triple-backtick block as (info string lowercased/trimmed, body).

    Returns None when there is no fence. An unterminated fence runs to the
    end of the text (rollouts get truncated mid-generation routinely).
    """
    lines = text.splitlines()
    for i, line in enumerate(lines):
        m = _FENCE_OPEN.match(line)
        if not m:
            continue
        tag = m.group(1).strip().lower()
        body_lines = []
        for j in range(i + 1, len(lines)):
            if _FENCE_CLOSE.match(lines[j]):
                break
            body_lines.append(lines[j])
        body = "".join(l + "\n" for l in body_lines)
        return tag, body
    return None


def parse_instruction_language(instruction: str, aliases: AliasTable) -> Optional[str]:
    """Longest keyword present in the instruction, canonicalized; None if absent."""
    text = instruction.lower()
    best: Optional[tuple[int, int, str]] = None  # (-len, position, keyword)
    for kw in aliases.keywords():
        m = re.search(rf"(?<![a-z0-9]){re.escape(kw)}(?![a-z0-9])", text)
        if m:
            cand = (-len(kw), m.start(), kw)
            if best is None or cand < best:
                best = cand
    if best is None:
        return None
    return aliases.resolve(best[2])


def fence_language(tag: str, aliases: AliasTable, target: Optional[str] = None) -> Optional[str]:
    """Canonical language from a fence info string (first token), None if blank."""
    token = tag.split()[0] if tag.split() else ""
    if not token:
        return None
    return aliases.resolve(token, target=target)


def alignment_reward(instruction: str, code: str, aliases: Optional[AliasTable] = None) -> int:
    """1 iff the fence language canonicalizes to the instruction's target language."""
    aliases = aliases or AliasTable()
    target = parse_instruction_language(instruction, aliases)
    if target is None:
        return 0
    fence = extract_code_fence(code)
    if fence is None:
        return 0
    lang = fence_language(fence[0], aliases, target=target)
    return 1 if lang == target else 0


def combined_reward(
    visual_mean: float,
    align: int,
    render_ok: bool,
    omega_v: float = DEFAULT_VISUAL_WEIGHT,
    omega_l: float = DEFAULT_ALIGN_WEIGHT,
) -> float:
    """Weighted blend; a failed render zeroes the visual term."""
    if omega_v < 0 or omega_l < 0 or abs(omega_v + omega_l - 1.0) > 1e-9:
        raise ValueError(f"weights must be non-negative and sum to 1, got {omega_v}, {omega_l}")
    visual = visual_mean if render_ok else 0.0
    return omega_v * visual + omega_l * align
