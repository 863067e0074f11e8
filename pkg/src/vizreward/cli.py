"""Command-line surface.

Subcommands: score, batch-score, ems, tanimoto, curate (dedup | cluster |
sample), build-refinement, serve, bench. Report-producing commands
(batch-score, bench) write a CSV next to a rendered matplotlib figure in
the output directory. Exit codes: 0 success, 1 usage error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import base64
import csv
import json
import sys
import time
from pathlib import Path

from . import __version__, chem, curation, ems as ems_mod
from .config import EngineConfig, load_config
from .embedding import embed
from .errors import VizRewardError
from .imaging import load_png
from .service import ScoringEngine, build_app


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_engine(args) -> ScoringEngine:
    cfg = load_config(args.config) if getattr(args, "config", None) else EngineConfig()
    return ScoringEngine(cfg)


def _read_image(path: str):
    return load_png(Path(path).read_bytes())


# ---------------------------------------------------------------- score


def cmd_score(args) -> int:
    engine = _load_engine(args)
    rollouts = []
    for path in args.rollout or []:
        rollouts.append(Path(path).read_text(encoding="utf-8"))
    rollouts.extend(args.rollout_text or [])
    if not rollouts:
        raise _UsageError("provide at least one --rollout or --rollout-text")
    target = engine.decode_target(image_path=args.target)
    result = engine.score_batch(
        target,
        args.instruction,
        rollouts,
        max_tiles=args.max_tiles,
    )
    json.dump(result.as_dict(), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_batch_score(args) -> int:
    engine = _load_engine(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    combined_all = []
    started = time.perf_counter()
    for line in Path(args.manifest).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        req = json.loads(line)
        rollouts = list(req.get("rollouts", []))
        for path in req.get("rollout_paths", []):
            rollouts.append(Path(path).read_text(encoding="utf-8"))
        target = engine.decode_target(image_path=req["target_image_path"])
        result = engine.score_batch(target, req["instruction"], rollouts)
        for i, summary in enumerate(result.per_rollout):
            advantage = result.advantages[i] if result.advantages else ""
            rows.append(
                {
                    "request_id": req.get("id", ""),
                    "rollout_index": i,
                    "status": summary.status,
                    "align": summary.align,
                    "visual_mean": f"{summary.visual_mean:.6f}",
                    "combined": f"{summary.combined:.6f}",
                    "advantage": f"{advantage:.6f}" if advantage != "" else "",
                    "wall_time": f"{summary.wall_time:.3f}",
                }
            )
            combined_all.append(summary.combined)
    elapsed = time.perf_counter() - started

    csv_path = out_dir / "scores.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else ["request_id"])
        writer.writeheader()
        writer.writerows(rows)

    fig_path = out_dir / "reward_summary.png"
    _reward_figure(combined_all, fig_path)
    print(f"scored {len(rows)} rollouts in {elapsed:.2f}s")
    print(f"wrote {csv_path} and {fig_path}")
    return 0


def _reward_figure(combined: list[float], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    if combined:
        ax.hist(combined, bins=20, range=(0.0, 1.0), color="#4878cf", edgecolor="black")
    ax.set_xlabel("combined reward")
    ax.set_ylabel("rollouts")
    ax.set_title("Reward distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------- metrics


def cmd_ems(args) -> int:
    ref = _read_image(args.ref)
    gen = _read_image(args.gen)
    report = ems_mod.ems(ref, gen, grid_rows=args.grid_rows, grid_cols=args.grid_cols)
    print(f"ems={report.ems:.6f}")
    print(f"emd_block={report.emd_block:.6f}")
    print(f"emd_norm={report.emd_norm:.6f}")
    print(f"v_bg={report.v_bg}")
    print(f"const_used={report.const_used}")
    return 0


def cmd_tanimoto(args) -> int:
    report = chem.tanimoto_from_smiles(args.pred, args.gt)
    print(f"tanimoto={report.tanimoto:.6f}")
    print(f"valid={'true' if report.valid else 'false'}")
    print(f"a_bits={report.a_bits}")
    print(f"b_bits={report.b_bits}")
    print(f"common_bits={report.common_bits}")
    return 0


# ---------------------------------------------------------------- curation


def cmd_curate_dedup(args) -> int:
    entries = curation.read_manifest(args.manifest)
    result = curation.dedup(entries, threshold=args.threshold)
    curation.write_manifest(result.kept, args.out)
    print(f"kept={len(result.kept)} dropped={len(result.dropped)} skipped={len(result.skipped)}")
    for entry, reason in result.skipped:
        print(f"skip {entry.id}: {reason}", file=sys.stderr)
    return 0


def cmd_curate_cluster(args) -> int:
    engine = _load_engine(args)
    entries = curation.read_manifest(args.manifest)
    if not entries:
        raise _UsageError("manifest is empty")
    vectors = [embed(engine.config.embedder, _read_image(e.image_path)) for e in entries]
    model = curation.minibatch_kmeans(
        vectors, k=args.k, batch=args.batch, iters=args.iters, seed=args.seed
    )
    payload = {
        "k": model.k,
        "centroids": model.centroids.tolist(),
        "assignments": list(model.assignments),
        "ids": [e.id for e in entries],
    }
    Path(args.out).write_text(json.dumps(payload), encoding="utf-8")
    sizes = model.cluster_sizes()
    print(f"k={model.k} sizes={sizes}")
    return 0


def cmd_curate_validate(args) -> int:
    import shlex

    entries = curation.read_manifest(args.manifest)
    result = curation.validate_entries(entries, shlex.split(args.command), timeout=args.timeout)
    curation.write_manifest(result.kept, args.out)
    print(f"kept={len(result.kept)} dropped={len(result.dropped)}")
    for entry, reason in result.dropped:
        print(f"drop {entry.id}: {reason}", file=sys.stderr)
    return 0


def cmd_curate_sample(args) -> int:
    import numpy as np

    entries = curation.read_manifest(args.manifest)
    raw = json.loads(Path(args.model).read_text(encoding="utf-8"))
    model = curation.ClusterModel(
        k=raw["k"],
        centroids=np.asarray(raw["centroids"], dtype=float),
        assignments=tuple(raw["assignments"]),
    )
    sampled = curation.diversity_sample(entries, model, n=args.n, seed=args.seed)
    curation.write_manifest(sampled, args.out)
    print(f"sampled={len(sampled)} of {len(entries)}")
    return 0


def cmd_build_refinement(args) -> int:
    entries = curation.read_manifest(args.manifest)
    count = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for entry in entries:
            if entry.kind != "refinement":
                continue
            draft = Path(entry.draft_code_path).read_text(encoding="utf-8")
            gt = Path(entry.code_path).read_text(encoding="utf-8")
            record = curation.build_refinement_record(entry, draft, gt)
            fh.write(curation.serialize_record(record) + "\n")
            count += 1
    print(f"wrote {count} refinement records to {args.out}")
    return 0


# ---------------------------------------------------------------- service


def cmd_serve(args) -> int:
    import uvicorn

    cfg = load_config(args.config) if args.config else EngineConfig()
    app = build_app(cfg)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_bench(args) -> int:
    import numpy as np

    from .imaging import encode_png, from_array
    from .render import b64_renderer

    engine = _load_engine(args)
    if "identity" not in engine.config.registry:
        engine.config.registry.register(b64_renderer())

    rng = np.random.RandomState(args.seed)
    target = from_array(rng.randint(0, 256, size=(448, 896, 3), dtype=np.uint8))
    payload = base64.b64encode(encode_png(target)).decode("ascii")
    rollout = f"```identity\n{payload}\n```"
    instruction = "redraw the image with the identity renderer"

    started = time.perf_counter()
    result = engine.score_batch(target, instruction, [rollout] * args.rollouts)
    elapsed = time.perf_counter() - started
    throughput = args.rollouts / elapsed

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "bench.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rollout_index", "status", "combined", "wall_time"])
        for i, s in enumerate(result.per_rollout):
            writer.writerow([i, s.status, f"{s.combined:.6f}", f"{s.wall_time:.4f}"])

    fig_path = out_dir / "throughput.png"
    _bench_figure([s.wall_time for s in result.per_rollout], throughput, fig_path)
    print(f"rollouts={args.rollouts} elapsed={elapsed:.2f}s throughput={throughput:.1f}/s")
    print(f"wrote {csv_path} and {fig_path}")
    return 0


def _bench_figure(wall_times: list[float], throughput: float, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(wall_times)), wall_times, marker="o", ms=3, lw=0.8, color="#4878cf")
    ax.set_xlabel("rollout")
    ax.set_ylabel("render wall time (s)")
    ax.set_title(f"Throughput: {throughput:.1f} rollouts/s")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------- wiring


def _build_parser() -> _Parser:
    parser = _Parser(prog="vizreward", description=__doc__)
    parser.add_argument("--version", action="version", version=f"vizreward {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score rollouts against a target image")
    p.add_argument("--target", required=True, help="target PNG path")
    p.add_argument("--instruction", required=True)
    p.add_argument("--rollout", action="append", help="rollout code file (repeatable)")
    p.add_argument("--rollout-text", action="append", help="rollout code literal (repeatable)")
    p.add_argument("--max-tiles", type=int, default=None)
    p.add_argument("--config")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("batch-score", help="score a JSONL manifest of requests")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="output directory for CSV + figure")
    p.add_argument("--config")
    p.set_defaults(func=cmd_batch_score)

    p = sub.add_parser("ems", help="Earth Mover's Similarity between two PNGs")
    p.add_argument("ref")
    p.add_argument("gen")
    p.add_argument("--grid-rows", type=int, default=ems_mod.DEFAULT_GRID)
    p.add_argument("--grid-cols", type=int, default=ems_mod.DEFAULT_GRID)
    p.set_defaults(func=cmd_ems)

    p = sub.add_parser("tanimoto", help="fingerprint similarity of two SMILES strings")
    p.add_argument("pred")
    p.add_argument("gt")
    p.set_defaults(func=cmd_tanimoto)

    p = sub.add_parser("curate", help="dataset curation utilities")
    curate_sub = p.add_subparsers(dest="curate_command", required=True)

    q = curate_sub.add_parser("dedup", help="perceptual-hash dedup of a manifest")
    q.add_argument("manifest")
    q.add_argument("--out", required=True)
    q.add_argument("--threshold", type=int, default=curation.DEFAULT_DEDUP_THRESHOLD)
    q.set_defaults(func=cmd_curate_dedup)

    q = curate_sub.add_parser("cluster", help="mini-batch k-means over entry embeddings")
    q.add_argument("manifest")
    q.add_argument("--out", required=True, help="cluster model JSON")
    q.add_argument("--k", type=int, default=curation.DEFAULT_K)
    q.add_argument("--batch", type=int, default=curation.DEFAULT_BATCH)
    q.add_argument("--iters", type=int, default=curation.DEFAULT_ITERS)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--config")
    q.set_defaults(func=cmd_curate_cluster)

    q = curate_sub.add_parser("validate", help="drop entries failing an external check")
    q.add_argument("manifest")
    q.add_argument("--command", required=True, help="validator with {input}, e.g. 'python3 -m py_compile {input}'")
    q.add_argument("--timeout", type=float, default=30.0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_curate_validate)

    q = curate_sub.add_parser("sample", help="cluster-proportional diversity sample")
    q.add_argument("manifest")
    q.add_argument("--model", required=True)
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_curate_sample)

    p = sub.add_parser("build-refinement", help="emit two-turn refinement records")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_refinement)

    p = sub.add_parser("serve", help="run the scoring web service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--config")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="synthetic throughput report")
    p.add_argument("--rollouts", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench-report")
    p.add_argument("--config")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except VizRewardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
