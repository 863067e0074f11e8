"""Dataset curation: perceptual-hash dedup, diversity clustering, refinement records.

Manifests are JSON Lines, one flat object per entry. Dedup is a greedy
first-kept-wins scan over 64-bit DCT perceptual hashes; diversity sampling
allocates per-cluster quotas by largest remainder over a mini-batch k-means
model and draws uniformly inside each cluster; refinement records wrap a
flawed draft and its ground-truth correction into the fixed two-turn
conversation layout used for refinement training data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.fft import dctn

from .errors import DecodeFailure, KTooLarge, MissingDraft
from .imaging import ImageBuf, load_png, resize, to_grayscale

DEFAULT_DEDUP_THRESHOLD = 6
DEFAULT_K = 64
DEFAULT_BATCH = 256
DEFAULT_ITERS = 200

SPLITS = ("sft", "rl")
KINDS = ("direct", "refinement")

REFINE_PREFIX = (
    "Previously, you generated an incomplete code implementation. "
    "Let's refine this plotting code. It seems to have inaccuracies and "
    "isn't working as expected.\nPrevious generated code:\n"
)
REFINE_SUFFIX = (
    "\nPlease modify the previous code snippets to ensure the code can "
    "render the given image."
)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: str
    code_path: str
    language: str
    split: str = "sft"
    kind: str = "direct"
    draft_code_path: Optional[str] = None

    def __post_init__(self):
        if not self.id or not self.image_path or not self.code_path:
            raise ValueError("id, image_path and code_path must be non-empty")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.kind == "refinement" and not self.draft_code_path:
            raise ValueError("refinement entries need draft_code_path")


def write_manifest(entries: Sequence[ManifestEntry], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            record = {
                "id": e.id,
                "image_path": e.image_path,
                "code_path": e.code_path,
                "language": e.language,
                "split": e.split,
                "kind": e.kind,
            }
            if e.draft_code_path is not None:
                record["draft_code_path"] = e.draft_code_path
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        entries.append(
            ManifestEntry(
                id=raw["id"],
                image_path=raw["image_path"],
                code_path=raw["code_path"],
                language=raw["language"],
                split=raw.get("split", "sft"),
                kind=raw.get("kind", "direct"),
                draft_code_path=raw.get("draft_code_path"),
            )
        )
    return entries


@dataclass
class ValidationResult:
    kept: list[ManifestEntry]
    dropped: list[tuple[ManifestEntry, str]]  # (entry, reason)


def validate_entries(
    entries: Sequence[ManifestEntry],
    command: Sequence[str],
    timeout: float = 30.0,
) -> ValidationResult:
    """External validation hook: run ``command`` (with a ``{input}`` token)
    against each entry's code file and drop entries where it exits nonzero.

    This is how linter-style syntax checks plug into the pipeline; the tool
    itself stays external.
    """
    import subprocess

    if sum(tok.count("{input}") for tok in command) != 1:
        raise ValueError("validation command needs {input} exactly once")
    kept: list[ManifestEntry] = []
    dropped: list[tuple[ManifestEntry, str]] = []
    for entry in entries:
        argv = [tok.replace("{input}", entry.code_path) for tok in command]
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=timeout)
        except (subprocess.TimeoutExpired, OSError) as exc:
            dropped.append((entry, str(exc)))
            continue
        if proc.returncode == 0:
            kept.append(entry)
        else:
            tail = (proc.stderr or proc.stdout or b"").decode("utf-8", "replace")[-400:]
            dropped.append((entry, tail.strip() or f"exit {proc.returncode}"))
    return ValidationResult(kept=kept, dropped=dropped)


@dataclass(frozen=True)
class PHash:
    bits: int  # 64-bit value

    def __post_init__(self):
        if not 0 <= self.bits < (1 << 64):
            raise ValueError("pHash must fit in 64 bits")

    def hamming(self, other: "PHash") -> int:
        return (self.bits ^ other.bits).bit_count()

    def __str__(self) -> str:
        return f"{self.bits:016x}"


def phash64(img: ImageBuf) -> PHash:
    """64-bit perceptual hash.

    Grayscale, resize to 32x32, 2D DCT, keep the top-left 8x8 block; each
    bit is coefficient > median, where the median is taken over the 63
    non-DC coefficients so global brightness cannot flip the threshold.
    Bit i (row-major, DC first) lands at position 63 - i.
    """
    gray = to_grayscale(img)
    small = resize(gray, 32, 32).samples[:, :, 0].astype(np.float64)
    coeffs = dctn(small, type=2)[:8, :8].ravel()
    median = float(np.median(coeffs[1:]))
    bits = 0
    for value in coeffs:
        bits = (bits << 1) | (1 if value > median else 0)
    return PHash(bits=bits)


@dataclass
class DedupResult:
    kept: list[ManifestEntry]
    dropped: list[ManifestEntry]
    skipped: list[tuple[ManifestEntry, str]]  # (entry, reason)


def _default_loader(entry: ManifestEntry) -> ImageBuf:
    return load_png(Path(entry.image_path).read_bytes())


def dedup(
    entries: Sequence[ManifestEntry],
    threshold: int = DEFAULT_DEDUP_THRESHOLD,
    loader: Callable[[ManifestEntry], ImageBuf] = _default_loader,
) -> DedupResult:
    """Greedy order-stable dedup: drop entries within ``threshold`` Hamming
    distance of any already-kept entry. Unreadable images are skipped and
    reported, never kept."""
    if not 0 <= threshold <= 64:
        raise ValueError("threshold must be in [0, 64]")
    kept: list[ManifestEntry] = []
    kept_hashes: list[PHash] = []
    dropped: list[ManifestEntry] = []
    skipped: list[tuple[ManifestEntry, str]] = []
    for entry in entries:
        try:
            h = phash64(loader(entry))
        except (OSError, DecodeFailure) as exc:
            skipped.append((entry, str(exc)))
            continue
        if any(h.hamming(prev) <= threshold for prev in kept_hashes):
            dropped.append(entry)
            continue
        kept.append(entry)
        kept_hashes.append(h)
    return DedupResult(kept=kept, dropped=dropped, skipped=skipped)


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, dims)
    assignments: tuple[int, ...]  # cluster index per input vector, in input order

    def __post_init__(self):
        if any(a < 0 or a >= self.k for a in self.assignments):
            raise ValueError("assignment index out of range")

    def cluster_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for a in self.assignments:
            sizes[a] += 1
        return sizes


def _as_matrix(vectors) -> np.ndarray:
    rows = []
    for v in vectors:
        rows.append(np.asarray(getattr(v, "values", v), dtype=np.float64))
    return np.stack(rows)


def _nearest(x: np.ndarray, centroids: np.ndarray) -> int:
    d = ((centroids - x) ** 2).sum(axis=1)
    return int(np.argmin(d))


def minibatch_kmeans(
    vectors,
    k: int,
    batch: int = DEFAULT_BATCH,
    iters: int = DEFAULT_ITERS,
    seed: int = 0,
) -> ClusterModel:
    """Mini-batch k-means, fully deterministic given the seed.

    k-means++ initialization, then per-iteration: sample a batch without
    replacement, assign each point to its nearest centroid and pull that
    centroid toward it with learning rate 1/count. Ends with a full-data
    assignment pass.
    """
    x = _as_matrix(vectors)
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise KTooLarge(f"k={k} exceeds {n} vectors")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    rs = np.random.RandomState(seed)

    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rs.randint(n)]
    for c in range(1, k):
        d2 = ((x[:, None, :] - centroids[None, :c, :]) ** 2).sum(axis=2).min(axis=1)
        total = d2.sum()
        if total <= 0:
            idx = rs.randint(n)
        else:
            idx = rs.choice(n, p=d2 / total)
        centroids[c] = x[idx]

    counts = np.zeros(k)
    size = min(batch, n)
    for _ in range(iters):
        for i in rs.choice(n, size=size, replace=False):
            c = _nearest(x[i], centroids)
            counts[c] += 1
            eta = 1.0 / counts[c]
            centroids[c] = (1.0 - eta) * centroids[c] + eta * x[i]

    d = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assignments = tuple(int(a) for a in d.argmin(axis=1))
    return ClusterModel(k=k, centroids=centroids, assignments=assignments)


def kmeans_inertia(vectors, model: ClusterModel) -> float:
    """Mean squared distance to the assigned centroid."""
    x = _as_matrix(vectors)
    d = ((x - model.centroids[list(model.assignments)]) ** 2).sum(axis=1)
    return float(d.mean())


def _largest_remainder_quotas(sizes: Sequence[int], n: int) -> list[int]:
    total = sum(sizes)
    exact = [n * s / total for s in sizes]
    quotas = [int(q) for q in exact]
    leftover = n - sum(quotas)
    remainders = sorted(
        range(len(sizes)), key=lambda i: (-(exact[i] - quotas[i]), i)
    )
    for i in remainders[:leftover]:
        quotas[i] += 1
    return quotas


def diversity_sample(
    entries: Sequence[ManifestEntry],
    model: ClusterModel,
    n: int,
    seed: int = 0,
) -> list[ManifestEntry]:
    """Cluster-proportional sample of ``n`` entries, deterministic per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(entries) != len(model.assignments):
        raise ValueError(
            f"{len(entries)} entries but model covers {len(model.assignments)} vectors"
        )
    if n >= len(entries):
        return list(entries)

    by_cluster: list[list[int]] = [[] for _ in range(model.k)]
    for idx, a in enumerate(model.assignments):
        by_cluster[a].append(idx)
    sizes = [len(members) for members in by_cluster]
    quotas = _largest_remainder_quotas([s for s in sizes if s > 0], n)

    rs = np.random.RandomState(seed)
    chosen: list[int] = []
    qi = 0
    for members in by_cluster:
        if not members:
            continue
        quota = quotas[qi]
        qi += 1
        if quota >= len(members):
            chosen.extend(members)
        elif quota > 0:
            picks = rs.choice(len(members), size=quota, replace=False)
            chosen.extend(members[p] for p in picks)
    chosen.sort()
    return [entries[i] for i in chosen]


def build_refinement_record(entry: ManifestEntry, draft_code: str, gt_code: str) -> dict:
    """Two-turn refinement record: user turn embeds the draft between the
    fixed refine phrases, assistant turn is the corrected code."""
    if entry.kind != "refinement":
        raise ValueError("entry is not a refinement entry")
    if not draft_code:
        raise MissingDraft(f"entry {entry.id} has an empty draft")
    instruction = REFINE_PREFIX + draft_code + REFINE_SUFFIX
    return {
        "id": entry.id,
        "image": entry.image_path,
        "language": entry.language,
        "conversations": [
            {"role": "user", "content": instruction},
            {"role": "assistant", "content": gt_code},
        ],
    }


def serialize_record(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False)


def parse_record(text: str) -> dict:
    return json.loads(text)
