"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every invocation logs its resolved configuration and seed to stderr; stdout
carries only the command's actual output (scores, report paths).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .encoder import PRESET_TRAIN_CROP, PRESETS, EncoderConfig, load_checkpoint, save_checkpoint
from .errors import DataError, TriqaError, UsageError
from .features import SCALES, extract_fused, extract_fused_matrix, load_features, save_features
from .fingerprints import checkpoint_fingerprint, corpus_fingerprint, sha256_file
from .fr import score_fr
from .harness import (
    REPORT_FORMATS,
    align_features_to_table,
    build_fr_report,
    build_nr_report,
    emit_report,
    load_dataset_table,
    run_ablation,
)
from .images import ImageStore, list_corpus, load_image
from .pipeline import (
    STAGES,
    _materialize,
    load_pipeline_config,
    log_resolved,
    run_pipeline,
    write_config_template,
)
from .regression import SplitProtocol, fit, load_model, predict, run_protocol, save_model
from .seeds import derive
from .training import train
from .triplets import build_manifest, read_manifest, write_manifest

log = logging.getLogger("triqa")


class _Parser(argparse.ArgumentParser):
    """argparse reports bad flags as exit code 2; ours must be 1."""

    def error(self, message):
        raise UsageError(message)


def _parse_scales(raw: str) -> tuple[str, ...]:
    scales = tuple(s.strip() for s in raw.split(",") if s.strip())
    for scale in scales:
        if scale not in SCALES:
            raise UsageError(f"unknown scale {scale!r}; choose from {', '.join(SCALES)}")
    if not scales:
        raise UsageError("at least one scale is required")
    return scales


def _log_invocation(args) -> None:
    shown = {k: str(v) for k, v in vars(args).items() if k not in ("func", "verbose", "quiet") and v is not None}
    log.info("%s: %s", args.command, json.dumps(shown, sort_keys=True))


# -- subcommand handlers ------------------------------------------------------


def _cmd_forge(args) -> int:
    ids = [image_id for image_id, _ in list_corpus(args.images)]
    manifest = build_manifest(
        ids,
        master_seed=args.seed,
        include_combined=args.include_combined,
        extras={"corpus_fingerprint": corpus_fingerprint(args.images)},
    )
    path = write_manifest(manifest, args.out)
    log.info(
        "forged %d triplets (%d single, %d combined) for %d images",
        len(manifest.entries),
        manifest.counts["single"],
        manifest.counts["combined"],
        len(ids),
    )
    if args.materialize:
        rendered = _materialize(manifest, ImageStore(args.images), Path(args.out).parent / "renders")
        log.info("materialized %d rendered chains", len(rendered))
    print(path)
    return 0


def _encoder_config_from_args(args) -> EncoderConfig:
    crop = args.crop if args.crop is not None else PRESET_TRAIN_CROP[args.preset]
    return EncoderConfig(
        preset=args.preset,
        epochs=args.epochs,
        margin=args.margin,
        learning_rate=args.lr,
        batch_size=args.batch,
        embed_dim=args.embed_dim,
        crop=crop,
        seed=args.seed,
    )


def _cmd_train(args) -> int:
    manifest = read_manifest(args.manifest)
    if manifest.extras and "corpus_fingerprint" in manifest.extras:
        if manifest.extras["corpus_fingerprint"] != corpus_fingerprint(args.images):
            raise DataError("corpus does not match the manifest's fingerprint; re-forge or point at the right images")
    ckpt = train(manifest, ImageStore(args.images), _encoder_config_from_args(args))
    path = save_checkpoint(ckpt, args.out)
    log.info("trained %d steps; final loss %.4f", ckpt.step, ckpt.history["loss"][-1] if ckpt.history["loss"] else float("nan"))
    print(path)
    return 0


def _cmd_extract(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    pairs = list_corpus(args.images)
    store = ImageStore(args.images)
    matrix = extract_fused_matrix((store.get(i) for i, _ in pairs), ckpt, args.scales)
    meta = {
        "checkpoint_fingerprint": checkpoint_fingerprint(ckpt),
        "encoder_seed": ckpt.config.seed,
        "scales": list(args.scales),
        "source": "corpus",
        "corpus_fingerprint": corpus_fingerprint(args.images),
        "rows": [i for i, _ in pairs],
    }
    path = save_features(args.out, matrix, meta)
    log.info("extracted %dx%d features", matrix.shape[0], matrix.shape[1])
    print(path)
    return 0


def _cmd_fit_head(args) -> int:
    matrix, meta = load_features(args.features)
    table = load_dataset_table(args.mos, images_dir=args.images)
    matrix, mos = align_features_to_table(matrix, meta, table)
    protocol_summary = None
    if args.iters > 0:
        if matrix.shape[0] >= 10:
            protocol = SplitProtocol(iterations=args.iters, seed=args.seed)
            result = run_protocol(matrix, mos, protocol)
            protocol_summary = {
                "iterations": protocol.effective_iterations,
                "median_srcc": result.median_srcc,
                "median_plcc": result.median_plcc,
                "std_srcc": result.std_srcc,
                "std_plcc": result.std_plcc,
            }
            log.info(
                "holdout protocol (%d iters): median SRCC %.4f PLCC %.4f",
                protocol.effective_iterations,
                result.median_srcc,
                result.median_plcc,
            )
        else:
            log.warning("fewer than 10 rows; skipping the holdout protocol")
    model = fit(matrix, mos, seed=derive(args.seed, "fit-head"))
    model.feature_fingerprint = sha256_file(Path(args.features).with_suffix(".npy"))
    meta_out = {"seed": args.seed}
    if protocol_summary:
        meta_out["protocol"] = protocol_summary
    path = save_model(model, args.out, meta=meta_out)
    log.info("fit head: dim %d, hyperparameters %s", model.dim, model.hyperparameters)
    print(path)
    return 0


def _cmd_score(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = load_model(args.model)
    features = extract_fused(load_image(args.image), ckpt, args.scales)
    value = predict(model, features.values)
    print(f"{value:.6f}")
    return 0


def _cmd_score_fr(args) -> int:
    value = score_fr(args.ref, args.dist, load_checkpoint(args.ckpt), scales=args.scales)
    print(f"{value:.6f}")
    return 0


def _cmd_eval(args) -> int:
    table = load_dataset_table(args.dataset, images_dir=args.images)
    ckpt = load_checkpoint(args.ckpt)
    protocol = SplitProtocol(iterations=args.iters, seed=args.seed, large_dataset=args.large_dataset)
    report = build_nr_report([table], ckpt, protocol, scales=args.scales)
    report.meta["master_seed"] = args.seed
    written = emit_report(report, args.report, args.format)
    for entry in report.datasets.values():
        log.info("median SRCC %.4f PLCC %.4f", entry["median_srcc"], entry["median_plcc"])
    for path in written:
        print(path)
    return 0


def _cmd_eval_fr(args) -> int:
    table = load_dataset_table(args.table, images_dir=args.images)
    ckpt = load_checkpoint(args.ckpt)
    report = build_fr_report([table], ckpt, scales=args.scales, logistic_fit=args.logistic)
    report.meta["master_seed"] = 0
    written = emit_report(report, args.report, args.format)
    for name, entry in report.datasets.items():
        if entry.get("degenerate"):
            log.warning("%s: degenerate table (constant MOS or scores)", name)
        else:
            log.info("%s: SRCC %.4f PLCC %.4f over %d pairs", name, entry["srcc"], entry["plcc"], entry["count"])
    for path in written:
        print(path)
    return 0


def _cmd_ablation(args) -> int:
    table = load_dataset_table(args.dataset, images_dir=args.images)
    ckpt_with = load_checkpoint(args.ckpt_with)
    ckpt_without = load_checkpoint(args.ckpt_without)
    protocol = SplitProtocol(iterations=args.iters, seed=args.seed, large_dataset=args.large_dataset)
    report = run_ablation([table], ckpt_with, ckpt_without, protocol, scales=args.scales)
    report.meta["master_seed"] = args.seed
    written = emit_report(report, args.report, args.format)
    for name, entry in report.datasets.items():
        log.info("%s: delta SRCC %s, delta PLCC %s", name, entry["display"]["srcc"], entry["display"]["plcc"])
    for path in written:
        print(path)
    return 0


def _cmd_pipeline(args) -> int:
    if args.write_config:
        path = write_config_template(args.write_config)
        print(path)
        return 0
    overrides = {
        "images": args.images,
        "workdir": args.workdir,
        "dataset": args.dataset,
        "dataset_images": args.dataset_images,
        "include_combined": args.include_combined,
        "materialize": args.materialize or None,
        "preset": args.preset,
        "epochs": args.epochs,
        "margin": args.margin,
        "learning_rate": args.lr,
        "batch_size": args.batch,
        "embed_dim": args.embed_dim,
        "crop": args.crop,
        "scales": _parse_scales(args.scales) if args.scales else None,
        "train_fraction": args.train_fraction,
        "iterations": args.iters,
        "large_dataset": args.large_dataset or None,
        "report_format": args.format,
        "logistic": args.logistic or None,
        "seed": args.seed,
    }
    config = load_pipeline_config(args.config, overrides)
    log_resolved(config)
    stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    written = run_pipeline(config, stages)
    for paths in written.values():
        for path in paths:
            print(path)
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="triqa", description="Rank-ordered distortion triplets for image quality assessment.")
    parser.add_argument("--version", action="version", version=f"triqa {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def scales_arg(p):
        p.add_argument("--scales", type=_parse_scales, default=SCALES, help="feature scales, e.g. full,half (default)")

    p = sub.add_parser("forge", help="enumerate rank-ordered triplets for a pristine corpus")
    p.add_argument("--images", required=True, help="directory of pristine images")
    p.add_argument("--out", required=True, help="manifest path (JSON lines)")
    p.add_argument("--include-combined", dest="include_combined", action="store_true", default=True)
    p.add_argument("--no-combined", dest="include_combined", action="store_false", help="single-distortion triplets only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--materialize", action="store_true", help="also write every rendered chain as PNG")
    p.set_defaults(func=_cmd_forge)

    p = sub.add_parser("train", help="train the quality encoder on a triplet manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--images", required=True, help="pristine corpus the manifest was forged from")
    p.add_argument("--preset", choices=PRESETS, default="desk-scale")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--margin", type=float, default=1.5)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--crop", type=int, default=None, help="training crop side (default: preset's)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("extract", help="fused content+quality features for a corpus")
    p.add_argument("--images", required=True)
    p.add_argument("--ckpt", required=True)
    scales_arg(p)
    p.add_argument("--out", required=True, help="feature matrix path (.npy + .json sidecar)")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("fit-head", help="fit the MOS regression head on extracted features")
    p.add_argument("--features", required=True)
    p.add_argument("--mos", required=True, help="CSV table: path,mos")
    p.add_argument("--images", default=None, help="root for relative paths in the table")
    p.add_argument("--iters", type=int, default=10, help="holdout protocol iterations before the final fit (0 skips)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model path (.npz + .json sidecar)")
    p.set_defaults(func=_cmd_fit_head)

    p = sub.add_parser("score", help="no-reference quality score for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--model", required=True)
    scales_arg(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("score-fr", help="full-reference similarity score for one pair")
    p.add_argument("--ref", required=True)
    p.add_argument("--dist", required=True)
    p.add_argument("--ckpt", required=True)
    scales_arg(p)
    p.set_defaults(func=_cmd_score_fr)

    p = sub.add_parser("eval", help="split-and-median evaluation on a MOS dataset")
    p.add_argument("--dataset", required=True, help="CSV table: path,mos")
    p.add_argument("--images", default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--large-dataset", action="store_true", help="single split iteration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True, help="output path (or prefix for plots)")
    p.add_argument("--format", choices=REPORT_FORMATS, default="json")
    scales_arg(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("eval-fr", help="full-reference evaluation on a pair table")
    p.add_argument("--table", required=True, help="CSV: path,mos,reference_path (or reference_path,distorted_path,mos)")
    p.add_argument("--images", default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--logistic", action="store_true", help="also fit a 4-parameter logistic remap")
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=REPORT_FORMATS, default="json")
    scales_arg(p)
    p.set_defaults(func=_cmd_eval_fr)

    p = sub.add_parser("ablation", help="compare two checkpoints on the same dataset")
    p.add_argument("--with", dest="ckpt_with", required=True, metavar="CKPT", help="checkpoint trained with combined triplets")
    p.add_argument("--without", dest="ckpt_without", required=True, metavar="CKPT", help="checkpoint trained without them")
    p.add_argument("--dataset", required=True)
    p.add_argument("--images", default=None)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--large-dataset", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=REPORT_FORMATS, default="json")
    scales_arg(p)
    p.set_defaults(func=_cmd_ablation)

    p = sub.add_parser("pipeline", help="run pipeline stages from a config file")
    p.add_argument("--config", default=None, help="INI config file (flags override it)")
    p.add_argument("--stages", default="forge,train,extract,fit-head,eval", help=f"comma list from: {', '.join(STAGES)}")
    p.add_argument("--write-config", default=None, metavar="PATH", help="write a commented config template and exit")
    p.add_argument("--images", default=None)
    p.add_argument("--workdir", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--dataset-images", dest="dataset_images", default=None)
    p.add_argument("--include-combined", dest="include_combined", action="store_const", const=True, default=None)
    p.add_argument("--no-combined", dest="include_combined", action="store_const", const=False)
    p.add_argument("--materialize", action="store_true")
    p.add_argument("--preset", choices=PRESETS, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--scales", default=None)
    p.add_argument("--train-fraction", dest="train_fraction", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--large-dataset", action="store_true")
    p.add_argument("--format", choices=REPORT_FORMATS, default=None)
    p.add_argument("--logistic", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def _setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.WARNING if quiet else logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def main(argv=None) -> int:
    _setup_logging(False, False)  # parse errors surface before flags are known
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _setup_logging(args.verbose, args.quiet)
        _log_invocation(args)
        return args.func(args) or 0
    except TriqaError as exc:
        log.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
