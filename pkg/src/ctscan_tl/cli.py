"""Command line entry point: ``ctscan-tl {split,train,evaluate,report}``.

Exit codes: 0 success, 2 configuration, 3 data, 4 training, 5 render/IO.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from .config import PipelineConfig
from .data import (DatasetManifest, compute_class_weights, partition_test_subsets, scan_dataset,
                   stratified_split, summarize_counts)
from .errors import ConfigError, DataError, PipelineError, RenderError
from .evaluation import EvaluationReport, evaluate
from .model import Model, build_head, load_backbone, load_model
from .report import write_report
from .train import ImageSource, TrainingHistory, fit

logger = logging.getLogger("ctscan_tl")

OUTPUT_ROOT_ENV = "CTSCAN_TL_OUTPUT_ROOT"


def cmd_split(args) -> int:
    cfg = PipelineConfig.load(args.config, args.seed)
    manifest = scan_dataset(cfg.data_root, cfg.class_names)
    manifest = stratified_split(manifest, cfg.ratios, cfg.split_seed)
    manifest = partition_test_subsets(manifest, cfg.test_subsets, cfg.split_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest.save(out)
    print(summarize_counts(manifest))
    print(f"wrote {len(manifest.records)} records to {out}")
    return 0


def _load_manifest(path, cfg: PipelineConfig) -> DatasetManifest:
    manifest = DatasetManifest.load(path, root=cfg.data_root)
    if list(manifest.class_names) != cfg.class_names:
        raise ConfigError(f"manifest classes {list(manifest.class_names)} differ from config "
                          f"{cfg.class_names}")
    return manifest


def _default_run_dir(cfg: PipelineConfig) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV) or cfg.output_dir)
    return root / "run" / datetime.now().strftime("%Y%m%d-%H%M%S")


def cmd_train(args) -> int:
    cfg = PipelineConfig.load(args.config, args.seed)
    manifest = _load_manifest(args.manifest, cfg)
    for split in ("train", "validation", "test"):
        if not manifest.subset(split):
            raise DataError(f"manifest has no {split} records")
    run_dir = Path(args.run_dir) if args.run_dir else _default_run_dir(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(run_dir / "log.txt", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logger.addHandler(handler)
    try:
        weights = compute_class_weights(manifest) if cfg.wants_auto_class_weights else None
        tcfg = cfg.training(weights)
        (run_dir / "config.json").write_text(json.dumps(cfg.snapshot(), indent=2, sort_keys=True)
                                            + "\n")
        h, w = cfg.image_size
        backbone = load_backbone(cfg.backbone_name, cfg.weights_source, (h, w, 3),
                                 seed=cfg.model_seed)
        head = build_head(backbone.output_shape, cfg.head, seed=cfg.model_seed)
        model = Model(backbone, head, cfg.freeze)
        logger.info("model: backbone %s %s -> %s, %d trainable parameters", backbone.name,
                    backbone.input_shape, backbone.output_shape, model.trainable_parameter_count())
        names = cfg.class_names
        train_src = ImageSource(manifest.subset("train"), names, cfg.image_size,
                                cache=tcfg.cache_images)
        val_src = ImageSource(manifest.subset("validation"), names, cfg.image_size,
                              cache=tcfg.cache_images)
        result = fit(model, train_src, val_src, cfg.policy, tcfg, names, run_dir=run_dir)
    finally:
        logger.removeHandler(handler)
        handler.close()
    hist = result.history
    best = hist.records[hist.best_epoch - 1]
    print(f"stopped after epoch {hist.stop_epoch}; best epoch {hist.best_epoch} "
          f"(val_loss {best.val_loss:.6f})")
    print(f"run directory: {run_dir}")
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run_dir)
    snap_path = run_dir / "config.json"
    if not snap_path.is_file():
        raise ConfigError(f"{snap_path} not found; is {run_dir} a training run directory?")
    cfg = PipelineConfig(json.loads(snap_path.read_text()), run_dir)
    model_dir = run_dir / "model-best"
    if not model_dir.is_dir():
        raise ConfigError(f"no model-best/ in {run_dir}")
    model, _ = load_model(model_dir)
    manifest = _load_manifest(args.manifest, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report = evaluate(model, manifest, cfg.image_size,
                      prediction_log=out.with_name(out.stem + "_predictions.csv"))
    report.metadata = {"run_dir": str(run_dir), "config_digest": cfg.digest(),
                       "created": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    report.save(out)
    for i, s in enumerate(report.per_subset, start=1):
        print(f"Test{i}: accuracy {s.accuracy:.4f} over {s.confusion.total} images")
    print(f"average accuracy {report.averages['accuracy']:.4f}; wrote {out}")
    return 0


def cmd_report(args) -> int:
    report = EvaluationReport.load(args.report)
    history = TrainingHistory.load(args.history) if args.history else None
    formats = {f.strip() for f in args.format.split(",") if f.strip()}
    if "all" in formats:
        formats = {"txt", "csv", "png"}
    bad = formats - {"txt", "csv", "png", "svg", "json"}
    if bad:
        raise ConfigError(f"unknown --format values {sorted(bad)}")
    try:
        bundle = write_report(report, args.out_dir, history, formats,
                              display_names=args.display_names.split(",")
                              if args.display_names else None)
    except OSError as exc:
        raise RenderError(str(exc)) from exc
    if "txt" in formats:
        print(bundle.text, end="")
    for f in bundle.files:
        print(f"wrote {f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctscan-tl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="scan the dataset and write a split manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model and populate a run directory")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--run-dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate the best model on every test subset")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="accepted for symmetry; evaluation is deterministic")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render tables and figures from report.json")
    p.add_argument("--report", required=True)
    p.add_argument("--history")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", default="txt,csv,png",
                   help="comma list of txt, csv, json, png, svg (or 'all')")
    p.add_argument("--display-names", help="comma list of axis labels for heatmaps")
    p.add_argument("--seed", type=int, help="accepted for symmetry; rendering is deterministic")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # the package logger stays at INFO so log.txt is complete; the console filters
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.addHandler(console)
    logger.setLevel(logging.INFO)
    start = time.perf_counter()
    try:
        code = args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RenderError.exit_code
    finally:
        logger.removeHandler(console)
    logger.debug("%s finished in %.1fs", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
