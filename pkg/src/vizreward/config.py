"""Engine configuration: renderer registry, alias table, embedder, weights.

One JSON file configures everything the service and CLI need. Renderer
adapters are declarative (language, command tokens, timeout); the alias
table can be given inline or as a separate ``alias=canonical`` file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .embedding import EmbedderSpec
from .render import RendererConfig, RendererRegistry, b64_renderer, copy_renderer
from .reward import DEFAULT_ALIGN_WEIGHT, DEFAULT_VISUAL_WEIGHT, AliasTable
from .tiling import DEFAULT_MAX_TILES

MAX_IMAGE_BYTES = 16 * 1024 * 1024  # decoded size cap for wire images


def default_registry() -> RendererRegistry:
    registry = RendererRegistry()
    registry.register(copy_renderer())
    registry.register(b64_renderer())
    return registry


def default_aliases() -> AliasTable:
    table = AliasTable()
    mapping = dict(table.mapping)
    # The built-in test renderers are addressable through alignment too.
    mapping.setdefault("identity", "identity")
    mapping.setdefault("copy", "copy")
    return AliasTable(mapping=mapping, contextual=dict(table.contextual))


@dataclass
class EngineConfig:
    registry: RendererRegistry = field(default_factory=default_registry)
    aliases: AliasTable = field(default_factory=default_aliases)
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    omega_v: float = DEFAULT_VISUAL_WEIGHT
    omega_l: float = DEFAULT_ALIGN_WEIGHT
    max_tiles: int = DEFAULT_MAX_TILES
    parallelism: int = 0  # 0 means "logical cores"
    max_image_bytes: int = MAX_IMAGE_BYTES

    def workers(self, jobs: int) -> int:
        cap = self.parallelism if self.parallelism > 0 else (os.cpu_count() or 1)
        return max(1, min(cap, jobs))


def load_config(path) -> EngineConfig:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    base = Path(path).parent

    if raw.get("include_builtin_renderers", True):
        registry = default_registry()
    else:
        registry = RendererRegistry()
    for spec in raw.get("renderers", []):
        registry.register(
            RendererConfig(
                language=spec["language"],
                command=tuple(spec["command"]),
                timeout=float(spec.get("timeout", 30.0)),
            )
        )

    if "alias_file" in raw:
        aliases = AliasTable.from_file(base / raw["alias_file"])
    elif "aliases" in raw:
        mapping = {str(k).lower(): str(v).lower() for k, v in raw["aliases"].items()}
        for canon in set(mapping.values()):
            mapping.setdefault(canon, canon)
        aliases = AliasTable(mapping=mapping)
    else:
        aliases = default_aliases()
    if "extra_aliases" in raw:
        mapping = dict(aliases.mapping)
        for k, v in raw["extra_aliases"].items():
            mapping[str(k).lower()] = str(v).lower()
        for canon in set(mapping.values()):
            mapping.setdefault(canon, canon)
        aliases = AliasTable(mapping=mapping, contextual=dict(aliases.contextual))

    emb = raw.get("embedder", {})
    embedder = EmbedderSpec(
        kind=emb.get("kind", "reference"),
        dims=int(emb.get("dims", 1024)),
        endpoint=emb.get("endpoint"),
        timeout=float(emb.get("timeout", 10.0)),
    )

    weights = raw.get("weights", {})
    return EngineConfig(
        registry=registry,
        aliases=aliases,
        embedder=embedder,
        omega_v=float(weights.get("visual", DEFAULT_VISUAL_WEIGHT)),
        omega_l=float(weights.get("align", DEFAULT_ALIGN_WEIGHT)),
        max_tiles=int(raw.get("max_tiles", DEFAULT_MAX_TILES)),
        parallelism=int(raw.get("parallelism", 0)),
        max_image_bytes=int(raw.get("max_image_bytes", MAX_IMAGE_BYTES)),
    )
