"""Sequential driver tying forge, training, features, head, and reports together.

One master seed feeds every stage through named sub-seeds, so a rerun with
the same config reproduces the manifest byte for byte and the reports number
for number. Stages hand artifacts to each other through files, and every
downstream stage rechecks the fingerprint of what it consumes; a stale or
foreign artifact is refused rather than silently used.
"""

from __future__ import annotations

import configparser
import json
import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .distortions import default_grouping
from .encoder import PRESET_TRAIN_CROP, PRESETS, EncoderConfig, load_checkpoint, save_checkpoint
from .errors import DataError, UsageError
from .features import SCALES, extract_fused_matrix, load_features, save_features
from .fingerprints import checkpoint_fingerprint, corpus_fingerprint, sha256_file
from .harness import align_features_to_table, build_fr_report, build_nr_report, emit_report, load_dataset_table, run_ablation
from .images import ImageStore, list_corpus, load_image, save_image
from .regression import SplitProtocol, fit, save_model
from .seeds import derive
from .training import train
from .triplets import build_manifest, chain_seed, read_manifest, render_chain, write_manifest

log = logging.getLogger("triqa")

STAGES = ("forge", "train", "extract", "fit-head", "eval", "eval-fr", "ablation")


@dataclass
class PipelineConfig:
    # paths
    images: str | None = None  # pristine corpus directory
    workdir: str = "triqa-run"
    dataset: str | None = None  # MOS table CSV for extract/fit-head/eval stages
    dataset_images: str | None = None  # root for relative paths in the table
    # forge
    include_combined: bool = True
    materialize: bool = False
    # train
    preset: str = "desk-scale"
    epochs: int = 1
    margin: float = 1.5
    learning_rate: float = 5e-4
    batch_size: int = 64
    embed_dim: int = 128
    crop: int | None = None  # None picks the preset's training crop
    # features
    scales: tuple[str, ...] = SCALES
    # protocol
    train_fraction: float = 0.8
    iterations: int = 10
    large_dataset: bool = False
    # eval
    report_format: str = "json"
    logistic: bool = False
    # run
    seed: int = 0
    grouping_version: str = "default-v1"

    def resolved_crop(self) -> int:
        return self.crop if self.crop is not None else PRESET_TRAIN_CROP[self.preset]

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            preset=self.preset,
            embed_dim=self.embed_dim,
            margin=self.margin,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            crop=self.resolved_crop(),
            seed=self.seed,
        )

    def protocol(self) -> SplitProtocol:
        return SplitProtocol(
            train_fraction=self.train_fraction,
            iterations=self.iterations,
            seed=self.seed,
            large_dataset=self.large_dataset,
        )

    def describe(self) -> str:
        parts = [f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)]
        return "PipelineConfig(" + ", ".join(parts) + ")"


# (section, key) -> (field name, parser)
_CONFIG_SCHEMA = {
    ("paths", "images"): ("images", str),
    ("paths", "workdir"): ("workdir", str),
    ("paths", "dataset"): ("dataset", str),
    ("paths", "dataset_images"): ("dataset_images", str),
    ("forge", "include_combined"): ("include_combined", "bool"),
    ("forge", "materialize"): ("materialize", "bool"),
    ("train", "preset"): ("preset", str),
    ("train", "epochs"): ("epochs", int),
    ("train", "margin"): ("margin", float),
    ("train", "learning_rate"): ("learning_rate", float),
    ("train", "batch_size"): ("batch_size", int),
    ("train", "embed_dim"): ("embed_dim", int),
    ("train", "crop"): ("crop", int),
    ("features", "scales"): ("scales", "scales"),
    ("protocol", "train_fraction"): ("train_fraction", float),
    ("protocol", "iterations"): ("iterations", int),
    ("protocol", "large_dataset"): ("large_dataset", "bool"),
    ("eval", "format"): ("report_format", str),
    ("eval", "logistic"): ("logistic", "bool"),
    ("run", "seed"): ("seed", int),
    ("run", "grouping"): ("grouping_version", str),
}

_BOOL_WORDS = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _parse_value(parser, raw: str, where: str):
    raw = raw.strip()
    try:
        if parser == "bool":
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError(raw)
            return _BOOL_WORDS[raw.lower()]
        if parser == "scales":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        return parser(raw)
    except ValueError:
        raise UsageError(f"bad value {raw!r} for {where}") from None


def load_pipeline_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then the config file, then explicit overrides (CLI flags)."""
    config = PipelineConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"config file not found: {path}")
        ini = configparser.ConfigParser()
        try:
            ini.read(path)
        except configparser.Error as exc:
            raise UsageError(f"malformed config file {path}: {exc}") from None
        updates = {}
        for section in ini.sections():
            for key, raw in ini.items(section):
                schema = _CONFIG_SCHEMA.get((section, key))
                if schema is None:
                    raise UsageError(f"unknown config entry [{section}] {key} in {path}")
                field_name, parser = schema
                updates[field_name] = _parse_value(parser, raw, f"[{section}] {key}")
        config = replace(config, **updates)
    if overrides:
        known = {f.name for f in fields(PipelineConfig)}
        unknown = set(overrides) - known
        if unknown:
            raise UsageError(f"unknown config overrides: {sorted(unknown)}")
        config = replace(config, **{k: v for k, v in overrides.items() if v is not None})
    _validate_config(config)
    return config


def _validate_config(config: PipelineConfig) -> None:
    if config.preset not in PRESETS:
        raise UsageError(f"unknown preset {config.preset!r}; choose from {', '.join(PRESETS)}")
    if config.epochs < 1:
        raise UsageError(f"epochs must be >= 1, got {config.epochs}")
    if config.crop is not None and config.crop < 1:
        raise UsageError(f"crop must be positive, got {config.crop}")
    for scale in config.scales:
        if scale not in SCALES:
            raise UsageError(f"unknown scale {scale!r}; choose from {', '.join(SCALES)}")
    if not config.scales:
        raise UsageError("at least one feature scale is required")


class Artifacts:
    """Canonical file layout inside the working directory."""

    def __init__(self, workdir: str | Path):
        self.root = Path(workdir)

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.jsonl"

    @property
    def manifest_single(self) -> Path:
        return self.root / "manifest-single.jsonl"

    @property
    def checkpoint(self) -> Path:
        return self.root / "encoder.pt"

    @property
    def checkpoint_single(self) -> Path:
        return self.root / "encoder-single.pt"

    @property
    def features(self) -> Path:
        return self.root / "features.npy"

    @property
    def model(self) -> Path:
        return self.root / "model.npz"

    def report(self, kind: str, fmt: str) -> Path:
        suffix = {"json": ".json", "csv": ".csv", "table-text": ".txt", "plots": ""}[fmt]
        name = {"nr": "report", "fr": "report-fr", "ablation": "report-ablation"}[kind]
        return self.root / (name + suffix)

    @property
    def renders(self) -> Path:
        return self.root / "renders"


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DataError(f"missing upstream artifact {path}; run the {producer} stage first")
    return path


def _require_config(value, flag: str):
    if value is None:
        raise UsageError(f"this stage needs {flag} to be configured")
    return value


def _load_table(config: PipelineConfig):
    dataset = _require_config(config.dataset, "[paths] dataset")
    return load_dataset_table(dataset, images_dir=config.dataset_images)


def run_pipeline(config: PipelineConfig, stages) -> dict[str, list[Path]]:
    """Execute the requested stages in dependency order; returns written paths."""
    requested = list(stages)
    unknown = [s for s in requested if s not in STAGES]
    if unknown:
        raise UsageError(f"unknown stages: {unknown}; choose from {', '.join(STAGES)}")
    ordered = [s for s in STAGES if s in requested]
    if not ordered:
        raise UsageError("no stages requested")

    log.info("pipeline config: %s", config.describe())
    log.info("stages: %s (master seed %d)", ", ".join(ordered), config.seed)
    art = Artifacts(config.workdir)
    art.root.mkdir(parents=True, exist_ok=True)
    written: dict[str, list[Path]] = {}
    for stage in ordered:
        written[stage] = _STAGE_FUNCS[stage](config, art)
        log.info("stage %s done: %s", stage, ", ".join(str(p) for p in written[stage]))
    return written


def _stage_forge(config: PipelineConfig, art: Artifacts) -> list[Path]:
    images_dir = _require_config(config.images, "[paths] images")
    ids = [image_id for image_id, _ in list_corpus(images_dir)]
    grouping = default_grouping()
    if grouping.version != config.grouping_version:
        raise DataError(
            f"configured grouping {config.grouping_version!r} does not match "
            f"the packaged grouping {grouping.version!r}"
        )
    manifest = build_manifest(
        ids,
        master_seed=config.seed,
        include_combined=config.include_combined,
        grouping=grouping,
        extras={"corpus_fingerprint": corpus_fingerprint(images_dir)},
    )
    write_manifest(manifest, art.manifest)
    out = [art.manifest]
    if config.materialize:
        out.extend(_materialize(manifest, ImageStore(images_dir), art.renders))
    return out


def _materialize(manifest, store, out_dir: Path) -> list[Path]:
    """Write every distinct rendered chain as a PNG, one folder per image."""
    out: list[Path] = []
    by_image: dict[str, dict] = {}
    for entry in manifest.entries:
        chains = by_image.setdefault(entry.image_id, {})
        for chain in (entry.anchor, entry.positive, entry.negative):
            chains[chain] = entry.seed
    for image_id, chains in by_image.items():
        folder = out_dir / image_id
        folder.mkdir(parents=True, exist_ok=True)
        pristine = store.get(image_id)
        for chain, seed in sorted(chains.items()):
            name = "pristine" if not chain else "__".join(f"{d}-{lv}" for d, lv in chain)
            path = folder / f"{name}.png"
            rendered = pristine if not chain else render_chain(pristine, chain, chain_seed(seed, chain))
            save_image(rendered, path)
            out.append(path)
    return out


def _stage_train(config: PipelineConfig, art: Artifacts) -> list[Path]:
    images_dir = _require_config(config.images, "[paths] images")
    manifest = read_manifest(_require(art.manifest, "forge"))
    recorded = manifest.extras.get("corpus_fingerprint")
    if recorded is not None and recorded != corpus_fingerprint(images_dir):
        raise DataError("corpus changed since the manifest was forged; re-run the forge stage")
    ckpt = train(manifest, ImageStore(images_dir), config.encoder_config())
    save_checkpoint(ckpt, art.checkpoint)
    return [art.checkpoint]


def _stage_extract(config: PipelineConfig, art: Artifacts) -> list[Path]:
    ckpt = load_checkpoint(_require(art.checkpoint, "train"))
    meta = {
        "checkpoint_fingerprint": checkpoint_fingerprint(ckpt),
        "master_seed": config.seed,
        "scales": list(config.scales),
    }
    if config.dataset is not None:
        table = _load_table(config)
        matrix = extract_fused_matrix((load_image(p) for p in table.paths), ckpt, config.scales)
        meta["source"] = "dataset"
        meta["dataset_sha256"] = sha256_file(table.source)
        meta["rows"] = [p.name for p in table.paths]
    else:
        images_dir = _require_config(config.images, "[paths] images or [paths] dataset")
        ids = [image_id for image_id, _ in list_corpus(images_dir)]
        store = ImageStore(images_dir)
        matrix = extract_fused_matrix((store.get(i) for i in ids), ckpt, config.scales)
        meta["source"] = "corpus"
        meta["corpus_fingerprint"] = corpus_fingerprint(images_dir)
        meta["rows"] = list(ids)
    save_features(art.features, matrix, meta)
    return [art.features, art.features.with_suffix(".json")]


def _stage_fit_head(config: PipelineConfig, art: Artifacts) -> list[Path]:
    matrix, meta = load_features(_require(art.features, "extract"))
    ckpt = load_checkpoint(_require(art.checkpoint, "train"))
    if meta.get("checkpoint_fingerprint") != checkpoint_fingerprint(ckpt):
        raise DataError("feature file was extracted with a different checkpoint; re-run the extract stage")
    table = _load_table(config)
    if meta.get("source") == "dataset":
        if meta.get("dataset_sha256") != sha256_file(table.source):
            raise DataError("dataset table changed since features were extracted; re-run the extract stage")
        mos = table.mos
    else:
        # corpus-mode features: keep the rows the table labels
        matrix, mos = align_features_to_table(matrix, meta, table)
    model = fit(matrix, mos, seed=derive(config.seed, "fit-head"))
    model.feature_fingerprint = sha256_file(art.features)
    save_model(model, art.model, meta={"master_seed": config.seed})
    return [art.model, art.model.with_suffix(".json")]


def _stage_eval(config: PipelineConfig, art: Artifacts) -> list[Path]:
    ckpt = load_checkpoint(_require(art.checkpoint, "train"))
    table = _load_table(config)
    report = build_nr_report([table], ckpt, config.protocol(), scales=config.scales)
    report.meta["master_seed"] = config.seed
    return emit_report(report, art.report("nr", config.report_format), config.report_format)


def _stage_eval_fr(config: PipelineConfig, art: Artifacts) -> list[Path]:
    ckpt = load_checkpoint(_require(art.checkpoint, "train"))
    table = _load_table(config)
    report = build_fr_report([table], ckpt, scales=config.scales, logistic_fit=config.logistic)
    report.meta["master_seed"] = config.seed
    return emit_report(report, art.report("fr", config.report_format), config.report_format)


def _stage_ablation(config: PipelineConfig, art: Artifacts) -> list[Path]:
    """Train a no-combined twin of the main encoder and compare the two heads."""
    images_dir = _require_config(config.images, "[paths] images")
    ckpt_with = load_checkpoint(_require(art.checkpoint, "train"))
    ids = [image_id for image_id, _ in list_corpus(images_dir)]
    manifest_single = build_manifest(
        ids,
        master_seed=config.seed,
        include_combined=False,
        extras={"corpus_fingerprint": corpus_fingerprint(images_dir)},
    )
    write_manifest(manifest_single, art.manifest_single)
    log.info("ablation: training the no-combined twin (%d triplets)", len(manifest_single.entries))
    ckpt_without = train(manifest_single, ImageStore(images_dir), config.encoder_config())
    save_checkpoint(ckpt_without, art.checkpoint_single)
    table = _load_table(config)
    report = run_ablation([table], ckpt_with, ckpt_without, config.protocol(), scales=config.scales)
    report.meta["master_seed"] = config.seed
    out = emit_report(report, art.report("ablation", config.report_format), config.report_format)
    return [art.manifest_single, art.checkpoint_single, *out]


_STAGE_FUNCS = {
    "forge": _stage_forge,
    "train": _stage_train,
    "extract": _stage_extract,
    "fit-head": _stage_fit_head,
    "eval": _stage_eval,
    "eval-fr": _stage_eval_fr,
    "ablation": _stage_ablation,
}


def write_config_template(path) -> Path:
    """Write a fully commented config file with the default values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_CONFIG_TEMPLATE)
    return path


_CONFIG_TEMPLATE = """\
# triqa pipeline configuration
# Precedence: command-line flags > this file > built-in defaults.

[paths]
# directory of pristine corpus images (forge, train, ablation)
images =
# working directory for all artifacts
workdir = triqa-run
# MOS table CSV: path,mos[,reference_path] (extract, fit-head, eval stages)
dataset =
# root for relative paths inside the table (default: the table's directory)
dataset_images =

[forge]
include_combined = true
materialize = false

[train]
preset = desk-scale
epochs = 1
margin = 1.5
learning_rate = 0.0005
batch_size = 64
embed_dim = 128
# random crop side; omit to use the preset's default
# crop = 160

[features]
scales = full,half

[protocol]
train_fraction = 0.8
iterations = 10
large_dataset = false

[eval]
format = json
logistic = false

[run]
seed = 0
grouping = default-v1
"""


def pipeline_config_dict(config: PipelineConfig) -> dict:
    """JSON-friendly view of the resolved config (logged by the CLI)."""
    out = {}
    for f in fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = list(value)
        out[f.name] = value
    return out


def log_resolved(config: PipelineConfig) -> None:
    log.info("resolved config: %s", json.dumps(pipeline_config_dict(config), sort_keys=True))
