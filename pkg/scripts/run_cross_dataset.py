#!/usr/bin/env python3
"""Drive the cross-dataset protocol: train on one manifest, test on others.

Typical use with real data (after `dbag extract` has produced feature caches
for every manifest):

    python scripts/run_cross_dataset.py \
        --config config.json \
        --train-manifest ffpp_c23.jsonl --train-cache-dir caches/ffpp \
        --test celebdf=celebdf_test.jsonl:caches/celebdf \
        --test dfd=dfd_test.jsonl:caches/dfd \
        --test dfdc=dfdc_test.jsonl:caches/dfdc \
        --out-dir cross_runs

Trains once (full training manifest), then scores each test manifest's test
split, writing one report per pairing. Producing any particular AUC is a
property of the data and backends, not of this harness.
"""

import argparse
from pathlib import Path

from dbag.config import PipelineConfig
from dbag.evalharness import ExperimentSpec, run_experiment


def parse_test_spec(value: str) -> tuple[str, Path, Path]:
    name, rest = value.split("=", 1)
    manifest, cache_dir = rest.split(":", 1)
    return name, Path(manifest), Path(cache_dir)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--train-manifest", required=True)
    parser.add_argument("--train-cache-dir", required=True)
    parser.add_argument("--train-split", default="full", help="split mode for the training side")
    parser.add_argument(
        "--test", action="append", required=True, metavar="NAME=MANIFEST:CACHE_DIR",
        help="test dataset; repeatable",
    )
    parser.add_argument("--test-split", default="random_80_20", help="split mode for test sides")
    parser.add_argument("--out-dir", default="cross_runs")
    args = parser.parse_args()

    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    out_root = Path(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    checkpoint = out_root / "checkpoint.dbag"

    train_spec = ExperimentSpec(
        manifest_path=Path(args.train_manifest),
        cache_dir=Path(args.train_cache_dir),
        split_mode=args.train_split,
        seed=cfg.seed,
    )
    for value in args.test:
        name, manifest, cache_dir = parse_test_spec(value)
        report = run_experiment(
            train_spec,
            ExperimentSpec(manifest_path=manifest, cache_dir=cache_dir,
                           split_mode=args.test_split, seed=cfg.seed, name=name),
            model_config=cfg.model,
            train_config=cfg.train,
            infer_config=cfg.inference,
            window=cfg.window,
            stride=cfg.stride,
            pad_mode=cfg.pad_mode,
            checkpoint_path=checkpoint,  # trained on the first pairing, reused after
            out_dir=out_root / name,
        )
        print(f"{name}: n={report.n_videos} ACC={report.acc:.2f} AUC={report.auc:.2f} EER={report.eer:.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
