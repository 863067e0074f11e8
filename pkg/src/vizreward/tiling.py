"""Coarse-to-fine decomposition: a dynamic grid of 448x448 tiles plus a global thumbnail.

The grid is picked per-axis (dimension / 448, rounded half-up, floor 1) and
scaled down proportionally if it would exceed the tile budget, so it tracks
the image's aspect ratio. Images at or below one tile collapse to a single
tile identical to the thumbnail, which makes the fine and coarse scores of
small images coincide by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .imaging import ImageBuf, PixelRect, crop, resize

TILE = 448
DEFAULT_MAX_TILES = 12


@dataclass(frozen=True)
class GridPlan:
    rows: int
    cols: int
    tile: int = TILE

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one row and column")

    @property
    def canvas_w(self) -> int:
        return self.cols * self.tile

    @property
    def canvas_h(self) -> int:
        return self.rows * self.tile


@dataclass(frozen=True)
class TileSet:
    plan: GridPlan
    tiles: tuple[ImageBuf, ...]  # row-major
    thumbnail: ImageBuf


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def plan_grid(w: int, h: int, max_tiles: int = DEFAULT_MAX_TILES) -> GridPlan:
    """Choose the tile grid for an image of size (w, h), capped at max_tiles."""
    if w < 1 or h < 1:
        raise ValueError("image dims must be >= 1")
    if max_tiles < 1:
        raise ValueError("max_tiles must be >= 1")
    cols = max(1, _round_half_up(w / TILE))
    rows = max(1, _round_half_up(h / TILE))
    while rows * cols > max_tiles:
        scale = math.sqrt(max_tiles / (rows * cols))
        new_rows = max(1, math.floor(rows * scale))
        new_cols = max(1, math.floor(cols * scale))
        if (new_rows, new_cols) == (rows, cols):
            # floor can stall when an axis is pinned at 1; shrink the other.
            if cols >= rows:
                new_cols = max(1, cols - 1)
            else:
                new_rows = max(1, rows - 1)
        rows, cols = new_rows, new_cols
    return GridPlan(rows=rows, cols=cols)


def make_thumbnail(img: ImageBuf) -> ImageBuf:
    return resize(img, TILE, TILE)


def split_tiles(img: ImageBuf, plan: GridPlan) -> TileSet:
    """Resize to the plan's canvas and cut non-overlapping tiles, row-major."""
    canvas = resize(img, plan.canvas_w, plan.canvas_h)
    tiles = []
    for r in range(plan.rows):
        for c in range(plan.cols):
            rect = PixelRect(x=c * plan.tile, y=r * plan.tile, w=plan.tile, h=plan.tile)
            tiles.append(crop(canvas, rect))
    return TileSet(plan=plan, tiles=tuple(tiles), thumbnail=make_thumbnail(img))
