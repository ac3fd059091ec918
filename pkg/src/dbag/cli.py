"""Command-line entry point.

Subcommands: extract, train, build-ref, predict, evaluate, export-viz.
Exit codes: 0 success, 1 usage/config error, 2 partial failure (some videos
failed), 3 artifact mismatch (missing/stale/corrupt artifact chain).
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evalharness
from .backends import registry_from_names
from .cache import read_sidecar, sidecar_path, write_feature_cache, write_landmark_cache, write_sidecar
from .config import PipelineConfig
from .descriptor import extract_video_features
from .errors import (
    ArtifactMismatch,
    CorruptCache,
    MissingArtifact,
    MissingCache,
    PipelineError,
    StatsMismatch,
)
from .evalharness import (
    ExperimentSpec,
    EvalReport,
    feature_cache_path,
    landmark_cache_path,
    load_split_slices,
    make_split,
    read_manifest,
    roc_points,
    run_experiment,
)
from .hashing import hash_file
from .inference import predict_videos, write_predictions, write_slice_details
from .ingest import read_video
from .trainer import ReferenceSet, build_reference_set, load_checkpoint, save_checkpoint, train, write_history

_MISMATCH_ERRORS = (MissingArtifact, MissingCache, ArtifactMismatch, CorruptCache, StatsMismatch)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; the CLI contract is 1
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    return cfg.with_overrides(
        seed=getattr(args, "seed", None),
        margin=getattr(args, "margin", None),
        m_neighbors=getattr(args, "m_neighbors", None),
        pad_mode=getattr(args, "pad_mode", None),
    )


def _plan_for(cfg: PipelineConfig, records, cache_dir):
    counts = None
    if cfg.split_mode == "segment_20_20":
        counts = evalharness.cached_frame_counts(records, cache_dir)
    return make_split(records, cfg.split_mode, cfg.seed, frame_counts=counts)


def _train_slices(cfg: PipelineConfig, records, cache_dir):
    plan = _plan_for(cfg, records, cache_dir)
    by_video = load_split_slices(
        records, cache_dir, plan, "train", cfg.window, cfg.stride, cfg.pad_mode
    )
    return [s for slices in by_video.values() for s in slices]


def cmd_extract(args) -> int:
    cfg = _load_config(args)
    records = read_manifest(args.manifest)
    manifest_dir = Path(args.manifest).resolve().parent
    cache_dir = Path(args.cache_dir or cfg.cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)

    local = threading.local()

    def get_registry():
        if not hasattr(local, "registry"):
            local.registry = registry_from_names(cfg.backends)
        return local.registry

    chain = cfg.extract_chain(get_registry().versions())

    def process(record):
        feat_path = feature_cache_path(cache_dir, record.video_id)
        if sidecar_path(feat_path).exists():
            meta = read_sidecar(feat_path)
            if meta.get("extract_chain") == chain and meta.get("source_path") == record.path:
                return (record.video_id, "skipped", None)
        registry = get_registry()
        source = Path(record.path)
        if not source.is_absolute():
            source = manifest_dir / source  # relative paths resolve against the manifest
        video = read_video(source, video_id=record.video_id)
        vf = extract_video_features(video, registry, cfg.region_spec, min_face=cfg.min_face)
        meta = {
            "video_id": record.video_id,
            "label": record.label,
            "dataset": record.dataset_name,
            "n_frames": int(vf.features.shape[0]),
            "n_source_frames": len(video),
            "source_indices": vf.source_indices,
            "coverage": vf.coverage,
            "backend_versions": registry.versions(),
            "region_spec_hash": cfg.region_spec.spec_hash,
            "stats_ref": None,  # standardization stats live in the checkpoint
            "extract_chain": chain,
            "source_path": record.path,
        }
        write_landmark_cache(landmark_cache_path(cache_dir, record.video_id), vf.landmarks, meta)
        write_feature_cache(feat_path, vf.features, meta)
        return (record.video_id, "written", None)

    results = []
    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            futures = {pool.submit(process, r): r for r in records}
            for future, record in futures.items():
                try:
                    results.append(future.result())
                except Exception as exc:
                    results.append((record.video_id, "failed", str(exc)))
    else:
        for record in records:
            try:
                results.append(process(record))
            except Exception as exc:
                results.append((record.video_id, "failed", str(exc)))

    written = sum(1 for _, status, _ in results if status == "written")
    skipped = sum(1 for _, status, _ in results if status == "skipped")
    failures = [(vid, err) for vid, status, err in results if status == "failed"]
    print(f"extract: {written} written, {skipped} up-to-date, {len(failures)} failed")
    for vid, err in failures:
        print(f"  FAILED {vid}: {err}", file=sys.stderr)
    return 2 if failures else 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    records = read_manifest(args.manifest)
    cache_dir = Path(args.cache_dir or cfg.cache_dir)
    artifacts = Path(args.artifacts_dir or cfg.artifacts_dir)
    artifacts.mkdir(parents=True, exist_ok=True)
    slices = _train_slices(cfg, records, cache_dir)
    result = train(slices, cfg.model, cfg.train)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else artifacts / "checkpoint.dbag"
    save_checkpoint(
        ckpt_path,
        result,
        extra_hashes={
            "pipeline_config": cfg.config_hash,
            "train_manifest": hash_file(args.manifest),
        },
    )
    write_history(artifacts / "train_history.jsonl", result.history)
    print(
        f"train: {len(slices)} slices, {cfg.train.epochs} epochs, "
        f"final mean loss {result.history[-1]['mean_loss']:.6f}"
    )
    print(f"checkpoint: {ckpt_path} ({hash_file(ckpt_path)[:12]})")
    return 0


def cmd_build_ref(args) -> int:
    cfg = _load_config(args)
    records = read_manifest(args.manifest)
    cache_dir = Path(args.cache_dir or cfg.cache_dir)
    artifacts = Path(args.artifacts_dir or cfg.artifacts_dir)
    artifacts.mkdir(parents=True, exist_ok=True)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else artifacts / "checkpoint.dbag"
    checkpoint = load_checkpoint(ckpt_path)
    slices = _train_slices(cfg, records, cache_dir)
    ref = build_reference_set(checkpoint, slices, manifest_hash=hash_file(args.manifest))
    out = Path(args.out) if args.out else artifacts / "reference_set.dbag"
    ref.save(out)
    print(f"build-ref: {len(ref)} embeddings -> {out}")
    return 0


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    records = read_manifest(args.manifest)
    cache_dir = Path(args.cache_dir or cfg.cache_dir)
    artifacts = Path(args.artifacts_dir or cfg.artifacts_dir)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else artifacts / "checkpoint.dbag"
    ref_path = Path(args.refset) if args.refset else artifacts / "reference_set.dbag"
    checkpoint = load_checkpoint(ckpt_path)
    ref = ReferenceSet.load(ref_path)
    plan = make_split(records, "full", cfg.seed)
    slices_by_video = load_split_slices(
        records, cache_dir, plan, "test", cfg.window, cfg.stride, cfg.pad_mode
    )
    verdicts, details = predict_videos(checkpoint, ref, slices_by_video, cfg.inference)
    out = Path(args.out) if args.out else artifacts / "predictions.jsonl"
    write_predictions(out, verdicts)
    write_sidecar(
        out,
        {
            "checkpoint": checkpoint.file_hash,
            "reference_set": hash_file(ref_path),
            "manifest": hash_file(args.manifest),
            "stats": checkpoint.stats.stats_hash,
        },
    )
    if args.detail:
        write_slice_details(Path(args.detail), details)
    print(f"predict: {len(verdicts)} videos -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    train_manifest = args.train_manifest or args.manifest
    test_manifest = args.test_manifest or args.manifest
    if not train_manifest or not test_manifest:
        raise _UsageError("evaluate needs --manifest or --train-manifest/--test-manifest")
    cache_dir = Path(args.cache_dir or cfg.cache_dir)
    test_cache_dir = Path(args.test_cache_dir) if args.test_cache_dir else cache_dir
    artifacts = Path(args.artifacts_dir or cfg.artifacts_dir)
    artifacts.mkdir(parents=True, exist_ok=True)
    report = run_experiment(
        train_spec=ExperimentSpec(
            manifest_path=Path(train_manifest),
            cache_dir=cache_dir,
            split_mode=args.train_split or cfg.split_mode,
            seed=cfg.seed,
        ),
        test_spec=ExperimentSpec(
            manifest_path=Path(test_manifest),
            cache_dir=test_cache_dir,
            split_mode=args.test_split or cfg.split_mode,
            seed=cfg.seed,
        ),
        model_config=cfg.model,
        train_config=cfg.train,
        infer_config=cfg.inference,
        window=cfg.window,
        stride=cfg.stride,
        pad_mode=cfg.pad_mode,
        checkpoint_path=args.checkpoint,
        out_dir=artifacts,
    )
    print(f"evaluate: n={report.n_videos} ACC={report.acc:.2f} AUC={report.auc:.2f} EER={report.eer:.2f}")
    print(f"report: {artifacts / 'eval_report.json'}")
    return 0


def cmd_export_viz(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wrote = []
    if args.report:
        report = EvalReport.load(args.report)
        scores = [v["fake_score"] for v in report.per_video]
        labels = [v["label"] for v in report.per_video]
        fpr, tpr, thr = roc_points(scores, labels)
        roc_path = out_dir / "roc_points.csv"
        with open(roc_path, "w", encoding="utf-8") as f:
            f.write("fpr,tpr,threshold\n")
            for a, b, c in zip(fpr, tpr, thr):
                f.write(f"{a},{b},{c}\n")
        wrote.append(roc_path)
    if args.refset:
        ref = ReferenceSet.load(args.refset)
        centered = ref.embeddings - ref.embeddings.mean(axis=0, keepdims=True)
        # PCA via SVD; 2-D projection for offline scatter plotting
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        coords = centered @ vt[:2].T
        emb_path = out_dir / "embeddings_2d.csv"
        with open(emb_path, "w", encoding="utf-8") as f:
            f.write("x,y,label\n")
            for (x, y), label in zip(coords, ref.labels):
                f.write(f"{x},{y},{label}\n")
        wrote.append(emb_path)
    if not wrote:
        raise _UsageError("export-viz needs --report and/or --refset")
    print("export-viz: " + ", ".join(str(p) for p in wrote))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dbag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest_required=True):
        p.add_argument("--config", help="pipeline config JSON file")
        if manifest_required:
            p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
        p.add_argument("--cache-dir", help="feature cache directory (overrides config)")
        p.add_argument("--artifacts-dir", help="artifact output directory (overrides config)")
        p.add_argument("--seed", type=int, help="override the pipeline seed")
        p.add_argument("--pad-mode", choices=["off", "repeat_last"], help="short-video padding")

    p = sub.add_parser("extract", help="compute feature/landmark caches for a manifest")
    common(p)
    p.add_argument("--workers", type=int, default=1, help="parallel videos")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the embedding network on cached features")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint output path")
    p.add_argument("--margin", type=float, help="triplet loss margin override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build-ref", help="embed training slices into a reference set")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--out", help="reference set output path")
    p.set_defaults(func=cmd_build_ref)

    p = sub.add_parser("predict", help="score a manifest of videos against a reference set")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--refset", help="reference set path")
    p.add_argument("--m-neighbors", type=int, help="neighbor count override")
    p.add_argument("--out", help="predictions output path (JSONL)")
    p.add_argument("--detail", help="also write per-slice verdicts to this path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="full experiment: train, reference, predict, metrics")
    common(p, manifest_required=False)
    p.add_argument("--manifest", help="manifest for both sides (in-dataset run)")
    p.add_argument("--train-manifest", help="training-side manifest")
    p.add_argument("--test-manifest", help="test-side manifest (cross-dataset runs)")
    p.add_argument("--test-cache-dir", help="cache dir for the test manifest")
    p.add_argument("--train-split", choices=evalharness.SPLIT_MODES, help="train-side split mode")
    p.add_argument("--test-split", choices=evalharness.SPLIT_MODES, help="test-side split mode")
    p.add_argument("--checkpoint", help="reuse this checkpoint instead of training")
    p.add_argument("--m-neighbors", type=int, help="neighbor count override")
    p.add_argument("--margin", type=float, help="triplet loss margin override")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-viz", help="CSV export of ROC points and 2-D embedding projections")
    p.add_argument("--report", help="eval report JSON to export ROC points from")
    p.add_argument("--refset", help="reference set to project to 2-D")
    p.add_argument("--out-dir", required=True, help="output directory for CSV files")
    p.set_defaults(func=cmd_export_viz)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"dbag: error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"dbag: error: {exc}", file=sys.stderr)
        return 1
    except _MISMATCH_ERRORS as exc:
        print(f"dbag: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (PipelineError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"dbag: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
