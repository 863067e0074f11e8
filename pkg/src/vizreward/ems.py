"""Earth Mover's Similarity: patch signatures, hierarchical EMD, normalization.

Both images are grayscaled (the generated one is first resized to the
reference's dimensions), partitioned into a grid of patches, and summarized
as weighted signatures: patches containing non-background pixels weigh 10x
more than background-only ones, so foreground drives the match. The cost of
pairing two patches is an exact EMD between their 8x8 downsampled pixel
mass points (ground distance = intensity gap plus 0.5 * Manhattan distance
in patch-local coordinates) plus a spatially scaled Manhattan distance
between patch centers. The block-level dissimilarity is an exact
transportation solve over the signature weights; the final score normalizes
by the dissimilarity to the worst-case constant image (black or white) and
clamps at zero.

Transportation problems are solved exactly with successive shortest paths
under node potentials. The intra-patch case has equal uniform masses on
both sides, which makes it an assignment problem; it goes through the
Hungarian method instead for speed. Both routes return true optima.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import Infeasible
from .imaging import ImageBuf, PixelRect, crop, resize, to_grayscale

DEFAULT_GRID = 8
DEFAULT_W_BG = 1.0
DEFAULT_W_FG = 10.0
DEFAULT_BG_TOL = 8
INTRA_SIDE = 8  # patches are downsampled to INTRA_SIDE^2 mass points
INTRA_SPATIAL_WEIGHT = 0.5

CONST_BLACK = "black"
CONST_WHITE = "white"

_BALANCE_TOL = 1e-9
_MASS_TOL = 1e-15


@dataclass(frozen=True)
class SignatureEntry:
    weight: float
    patch: ImageBuf  # grayscale
    center: tuple[float, float]  # normalized (x, y) in [0,1]^2


@dataclass(frozen=True)
class Signature:
    entries: tuple[SignatureEntry, ...]
    patch_w: int
    patch_h: int
    canvas_w: int
    canvas_h: int


@dataclass(frozen=True)
class TransportProblem:
    supply: np.ndarray
    demand: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.supply, dtype=np.float64)
        d = np.ascontiguousarray(self.demand, dtype=np.float64)
        c = np.ascontiguousarray(self.cost, dtype=np.float64)
        if c.shape != (s.shape[0], d.shape[0]):
            raise ValueError(f"cost shape {c.shape} != {(s.shape[0], d.shape[0])}")
        if np.any(s < 0) or np.any(d < 0):
            raise Infeasible("masses must be non-negative")
        if np.any(c < 0):
            raise ValueError("transport costs must be non-negative")
        total_s, total_d = float(s.sum()), float(d.sum())
        if abs(total_s - total_d) > _BALANCE_TOL * max(1.0, total_s):
            raise Infeasible(f"unbalanced marginals: {total_s} vs {total_d}")
        for arr in (s, d, c):
            arr.setflags(write=False)
        object.__setattr__(self, "supply", s)
        object.__setattr__(self, "demand", d)
        object.__setattr__(self, "cost", c)


@dataclass(frozen=True)
class EmsReport:
    ems: float
    emd_block: float
    emd_norm: float
    v_bg: int
    const_used: str


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def background_value(ref_gray: ImageBuf) -> int:
    """Most frequent intensity; ties break toward the lower value."""
    if ref_gray.channels != 1:
        raise ValueError("background_value expects a 1-channel image")
    hist = np.bincount(ref_gray.samples.ravel(), minlength=256)
    return int(np.argmax(hist))


def build_signature(
    gray: ImageBuf,
    grid_rows: int,
    grid_cols: int,
    v_bg: int,
    w_bg: float = DEFAULT_W_BG,
    w_fg: float = DEFAULT_W_FG,
    bg_tol: int = DEFAULT_BG_TOL,
) -> Signature:
    """Weighted patch signature over a rows x cols grid.

    The image is resized so each axis is an exact multiple of the grid
    (nearest multiple, half-up). A patch is foreground-weighted when any
    pixel deviates from the background value by more than ``bg_tol``.
    """
    if gray.channels != 1:
        raise ValueError("build_signature expects a 1-channel image")
    if grid_rows < 1 or grid_cols < 1:
        raise ValueError("grid must be at least 1x1")
    patch_w = max(1, _round_half_up(gray.width / grid_cols))
    patch_h = max(1, _round_half_up(gray.height / grid_rows))
    canvas = resize(gray, patch_w * grid_cols, patch_h * grid_rows)

    entries = []
    for r in range(grid_rows):
        for c in range(grid_cols):
            patch = crop(canvas, PixelRect(x=c * patch_w, y=r * patch_h, w=patch_w, h=patch_h))
            deviates = np.abs(patch.samples.astype(np.int16) - v_bg) > bg_tol
            weight = w_fg if bool(deviates.any()) else w_bg
            center = ((c + 0.5) / grid_cols, (r + 0.5) / grid_rows)
            entries.append(SignatureEntry(weight=weight, patch=patch, center=center))
    return Signature(
        entries=tuple(entries),
        patch_w=patch_w,
        patch_h=patch_h,
        canvas_w=canvas.width,
        canvas_h=canvas.height,
    )


# Spatial half of the intra-patch ground distance is fixed for the 8x8 support.
def _intra_spatial_matrix() -> np.ndarray:
    coords = np.stack(
        np.meshgrid(np.arange(INTRA_SIDE), np.arange(INTRA_SIDE), indexing="ij"), axis=-1
    ).reshape(-1, 2) / (INTRA_SIDE - 1)
    diff = np.abs(coords[:, None, :] - coords[None, :, :]).sum(axis=2)
    return INTRA_SPATIAL_WEIGHT * diff


_SPATIAL = _intra_spatial_matrix()


class _PairCache:
    def __init__(self, capacity: int = 65536):
        self.capacity = capacity
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            val = self._data.get(key)
            if val is not None:
                self._data.move_to_end(key)
            return val

    def put(self, key, val):
        with self._lock:
            self._data[key] = val
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)


_emd_cache = _PairCache()


def _intra_points(patch: ImageBuf) -> np.ndarray:
    small = resize(patch, INTRA_SIDE, INTRA_SIDE)
    return small.samples[:, :, 0].astype(np.float64).ravel() / 255.0


def _intra_emd_from_points(a: np.ndarray, b: np.ndarray) -> float:
    key = (a.tobytes(), b.tobytes())
    if key[0] == key[1]:
        return 0.0
    hit = _emd_cache.get(key)
    if hit is not None:
        return hit
    cost = np.abs(a[:, None] - b[None, :]) + _SPATIAL
    rows, cols = linear_sum_assignment(cost)
    val = float(cost[rows, cols].sum()) / cost.shape[0]
    _emd_cache.put(key, val)
    _emd_cache.put((key[1], key[0]), val)
    return val


def intra_patch_emd(patch_a: ImageBuf, patch_b: ImageBuf) -> float:
    """Exact EMD between two equal-size patches.

    Each patch becomes 64 mass points of 1/64 on an 8x8 grid with features
    (intensity/255, x/7, y/7); ground distance is the intensity gap plus
    half the Manhattan distance. Equal uniform masses make this an
    assignment problem, solved exactly.
    """
    if (patch_a.width, patch_a.height) != (patch_b.width, patch_b.height):
        raise ValueError("patches must share dimensions")
    return _intra_emd_from_points(_intra_points(patch_a), _intra_points(patch_b))


class _SspState:
    """Successive-shortest-paths state over the transportation network.

    Explicit super-source and super-sink take part in the potential updates;
    that keeps every residual reduced cost non-negative across phases, which
    plain multi-source restarts do not.
    """

    PARENT_SOURCE = -2

    def __init__(self, supply, demand, cost, eps):
        self.supply = supply
        self.demand = demand
        self.cost = cost
        self.eps = eps
        m, n = cost.shape
        self.flow = np.zeros((m, n))
        self.shipped = np.zeros(m)
        self.delivered = np.zeros(n)
        self.pot_s = np.zeros(m)
        self.pot_d = np.zeros(n)
        self.pot_src = 0.0
        self.pot_snk = 0.0

    def augment(self) -> float:
        """One shortest-path phase; returns the mass moved (0 if no path)."""
        m, n = self.cost.shape
        inf = np.inf
        dist_s = np.full(m, inf)
        dist_d = np.full(n, inf)
        dist_src, dist_snk = 0.0, inf
        done_s = np.zeros(m, dtype=bool)
        done_d = np.zeros(n, dtype=bool)
        done_src = False
        parent_d = np.full(n, -1, dtype=np.intp)  # supply feeding this demand
        parent_s = np.full(m, -1, dtype=np.intp)  # demand (backward) or source
        parent_snk = -1

        while True:
            best, kind, idx = inf, None, -1
            if not done_src and dist_src < best:
                best, kind = dist_src, "src"
            ds = np.where(done_s, inf, dist_s)
            i = int(np.argmin(ds))
            if ds[i] < best:
                best, kind, idx = ds[i], "supply", i
            dd = np.where(done_d, inf, dist_d)
            j = int(np.argmin(dd))
            if dd[j] < best:
                best, kind, idx = dd[j], "demand", j
            if dist_snk <= best:
                kind = "sink" if dist_snk < inf else None
                break
            if kind == "src":
                done_src = True
                rc = np.maximum(self.pot_src - self.pot_s, 0.0)
                nd = dist_src + rc
                upd = ((self.supply - self.shipped) > self.eps) & ~done_s & (nd < dist_s)
                dist_s[upd] = nd[upd]
                parent_s[upd] = self.PARENT_SOURCE
            elif kind == "supply":
                done_s[idx] = True
                rc = np.maximum(self.cost[idx, :] + self.pot_s[idx] - self.pot_d, 0.0)
                nd = dist_s[idx] + rc
                upd = ~done_d & (nd < dist_d)
                dist_d[upd] = nd[upd]
                parent_d[upd] = idx
            else:  # demand
                done_d[idx] = True
                rc = np.maximum(self.pot_d[idx] - self.cost[:, idx] - self.pot_s, 0.0)
                nd = dist_d[idx] + rc
                upd = (self.flow[:, idx] > self.eps) & ~done_s & (nd < dist_s)
                dist_s[upd] = nd[upd]
                parent_s[upd] = idx
                if (self.demand[idx] - self.delivered[idx]) > self.eps:
                    nd_t = dist_d[idx] + max(self.pot_d[idx] - self.pot_snk, 0.0)
                    if nd_t < dist_snk:
                        dist_snk = nd_t
                        parent_snk = idx

        if kind is None or parent_snk < 0:
            return 0.0

        reach = dist_snk
        self.pot_s += np.minimum(dist_s, reach)
        self.pot_d += np.minimum(dist_d, reach)
        self.pot_src += min(dist_src, reach)
        self.pot_snk += reach

        # Walk sink -> source through the Dijkstra tree, tracking bottleneck.
        target = parent_snk
        path = []  # (increase?, i, j)
        j = target
        amount = self.demand[target] - self.delivered[target]
        while True:
            i = int(parent_d[j])
            path.append((True, i, j))
            if parent_s[i] == self.PARENT_SOURCE:
                root = i
                break
            j = int(parent_s[i])
            path.append((False, i, j))
            amount = min(amount, self.flow[i, j])
        amount = min(amount, self.supply[root] - self.shipped[root])
        if amount <= 0.0:
            return 0.0
        for increase, i, j in path:
            if increase:
                self.flow[i, j] += amount
            else:
                self.flow[i, j] -= amount
        self.shipped[root] += amount
        self.delivered[target] += amount
        return amount


def solve_transport(problem: TransportProblem) -> tuple[float, np.ndarray]:
    """Exact minimum-cost transportation via successive shortest paths.

    The reported cost is recomputed from the final flow matrix.
    Returns (cost, flow).
    """
    cost = problem.cost
    m, n = cost.shape
    total = float(problem.supply.sum())
    if total <= 0.0:
        return 0.0, np.zeros((m, n))

    eps = _MASS_TOL * max(1.0, total)
    state = _SspState(problem.supply, problem.demand, cost, eps)
    max_rounds = 4 * (m + n) * max(m, n) + 16
    rounds = 0
    while total - float(state.delivered.sum()) > eps:
        rounds += 1
        if rounds > max_rounds:
            raise Infeasible("transport solve failed to converge")
        if state.augment() <= 0.0:
            raise Infeasible("no augmenting path found")
    return float(np.sum(state.flow * cost)), state.flow


def spatial_lambda(patch_w: int, patch_h: int, canvas_w: int, canvas_h: int) -> float:
    """Scale for the center-distance term: sqrt(patch area) / (W + H)."""
    return math.sqrt(patch_w * patch_h) / (canvas_w + canvas_h)


def _block_cost_matrix(sig_a: Signature, sig_b: Signature, lam: float) -> np.ndarray:
    points_a = [_intra_points(e.patch) for e in sig_a.entries]
    points_b = [_intra_points(e.patch) for e in sig_b.entries]
    ka, kb = len(points_a), len(points_b)
    out = np.empty((ka, kb), dtype=np.float64)
    for i, (pa, ea) in enumerate(zip(points_a, sig_a.entries)):
        for j, (pb, eb) in enumerate(zip(points_b, sig_b.entries)):
            center_term = lam * (
                abs(ea.center[0] - eb.center[0]) + abs(ea.center[1] - eb.center[1])
            )
            out[i, j] = _intra_emd_from_points(pa, pb) + center_term
    return out


def emd_block(sig_a: Signature, sig_b: Signature, lam: float) -> float:
    """Signature-level EMD: weights normalized to unit mass on both sides."""
    w_a = np.array([e.weight for e in sig_a.entries], dtype=np.float64)
    w_b = np.array([e.weight for e in sig_b.entries], dtype=np.float64)
    problem = TransportProblem(
        supply=w_a / w_a.sum(),
        demand=w_b / w_b.sum(),
        cost=_block_cost_matrix(sig_a, sig_b, lam),
    )
    cost, _ = solve_transport(problem)
    return cost


def ems(
    ref: ImageBuf,
    gen: ImageBuf,
    grid_rows: int = DEFAULT_GRID,
    grid_cols: int = DEFAULT_GRID,
    w_bg: float = DEFAULT_W_BG,
    w_fg: float = DEFAULT_W_FG,
    bg_tol: int = DEFAULT_BG_TOL,
) -> EmsReport:
    """Earth Mover's Similarity in [0, 1]; 1 means identical, 0 means as
    dissimilar as the worst constant image."""
    ref_gray = to_grayscale(ref)
    gen_gray = to_grayscale(resize(gen, ref.width, ref.height))
    v_bg = background_value(ref_gray)

    sig_ref = build_signature(ref_gray, grid_rows, grid_cols, v_bg, w_bg, w_fg, bg_tol)
    sig_gen = build_signature(gen_gray, grid_rows, grid_cols, v_bg, w_bg, w_fg, bg_tol)
    lam = spatial_lambda(sig_ref.patch_w, sig_ref.patch_h, sig_ref.canvas_w, sig_ref.canvas_h)

    block = emd_block(sig_ref, sig_gen, lam)

    consts = {}
    for name, value in ((CONST_BLACK, 0), (CONST_WHITE, 255)):
        const_img = ImageBuf(
            width=ref_gray.width,
            height=ref_gray.height,
            channels=1,
            samples=np.full((ref_gray.height, ref_gray.width, 1), value, dtype=np.uint8),
        )
        sig_const = build_signature(const_img, grid_rows, grid_cols, v_bg, w_bg, w_fg, bg_tol)
        consts[name] = emd_block(sig_ref, sig_const, lam)

    const_used = CONST_BLACK if consts[CONST_BLACK] >= consts[CONST_WHITE] else CONST_WHITE
    norm = consts[const_used]
    if norm == 0.0:
        # Only possible when the reference quantizes to both constants at
        # once, i.e. never; defined for completeness: identical -> 1.
        return EmsReport(
            ems=1.0 if block == 0.0 else 0.0,
            emd_block=block,
            emd_norm=norm,
            v_bg=v_bg,
            const_used=const_used,
        )
    return EmsReport(
        ems=max(0.0, 1.0 - block / norm),
        emd_block=block,
        emd_norm=norm,
        v_bg=v_bg,
        const_used=const_used,
    )
