"""Dataset tables, evaluation reports, and the combined-vs-single ablation.

A dataset table is a CSV of image paths with mean opinion scores, optionally
with a reference column for full-reference rows. The harness turns tables
into reports: per-iteration and median SRCC/PLCC for the regression head,
raw correlations for the training-free full-reference scorer, and paired
with/without deltas for the ablation. Reports serialize to JSON and a long
CSV losslessly, and to a text table or PNG plots for reading.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError
from .features import SCALES, extract_fused_matrix
from .fingerprints import checkpoint_fingerprint, sha256_file
from .fr import evaluate_fr
from .images import load_image
from .regression import ProtocolResult, SplitProtocol, run_protocol

log = logging.getLogger("triqa")

REPORT_FORMAT = "triqa-eval-report"
REPORT_VERSION = 1

CSV_COLUMNS = ("section", "dataset", "record", "index", "field", "value")


# -- dataset tables -----------------------------------------------------------


@dataclass
class DatasetTable:
    name: str
    paths: list[Path]
    mos: np.ndarray
    reference_paths: list[Path] | None = None
    source: Path | None = None

    @property
    def has_references(self) -> bool:
        return self.reference_paths is not None

    def __len__(self) -> int:
        return len(self.paths)


def load_dataset_table(csv_path, images_dir=None, name: str | None = None) -> DatasetTable:
    """Parse a `path,mos[,reference_path]` CSV and check every file exists.

    `distorted_path` is accepted as a synonym for `path`, so pair tables
    written as reference_path,distorted_path,mos load unchanged. Relative
    paths resolve against `images_dir`, or the CSV's directory when no image
    root is given. Extra columns are ignored.
    """
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise DataError(f"dataset table not found: {csv_path}")
    root = Path(images_dir) if images_dir is not None else csv_path.parent

    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        path_column = "path" if "path" in header else "distorted_path"
        if path_column not in header:
            raise DataError(f"dataset table {csv_path} is missing column 'path'")
        if "mos" not in header:
            raise DataError(f"dataset table {csv_path} is missing column 'mos'")
        with_refs = "reference_path" in header
        paths: list[Path] = []
        refs: list[Path] = []
        mos: list[float] = []
        for line_no, row in enumerate(reader, start=2):
            raw_path = (row.get(path_column) or "").strip()
            raw_mos = (row.get("mos") or "").strip()
            if not raw_path:
                raise DataError(f"{csv_path}:{line_no}: empty path")
            try:
                mos.append(float(raw_mos))
            except ValueError:
                raise DataError(f"{csv_path}:{line_no}: bad mos value {raw_mos!r}") from None
            if not math.isfinite(mos[-1]):
                raise DataError(f"{csv_path}:{line_no}: non-finite mos value {raw_mos!r}")
            paths.append(_resolve_path(raw_path, root))
            if with_refs:
                raw_ref = (row.get("reference_path") or "").strip()
                if not raw_ref:
                    raise DataError(f"{csv_path}:{line_no}: empty reference_path")
                refs.append(_resolve_path(raw_ref, root))

    if len(paths) < 2:
        raise DataError(f"dataset table {csv_path} has {len(paths)} rows, need at least 2")
    missing = [str(p) for p in {*paths, *refs} if not p.is_file()]
    if missing:
        shown = ", ".join(sorted(missing)[:5])
        raise DataError(f"dataset table {csv_path} references missing files: {shown}")
    return DatasetTable(
        name=name or csv_path.stem,
        paths=paths,
        mos=np.array(mos, dtype=np.float64),
        reference_paths=refs if with_refs else None,
        source=csv_path,
    )


def _resolve_path(raw: str, root: Path) -> Path:
    p = Path(raw)
    return p if p.is_absolute() else root / p


def align_features_to_table(matrix, meta: dict, table: DatasetTable):
    """Select feature rows labeled in the table; every label must have features.

    Alignment is by filename stem. Feature rows without a label are dropped
    (a corpus may hold pristine images nobody scored), but a labeled image
    with no feature row is an error: silently fitting on a subset of the
    table would misrepresent the dataset.
    """
    stem_to_row = {Path(row).stem: i for i, row in enumerate(meta["rows"])}
    indices, mos = [], []
    missing = []
    for path, value in zip(table.paths, table.mos):
        row = stem_to_row.get(path.stem)
        if row is None:
            missing.append(path.name)
        else:
            indices.append(row)
            mos.append(value)
    if missing:
        raise DataError(f"no features extracted for {len(missing)} labeled images, e.g. {missing[:5]}")
    if len(indices) < len(meta["rows"]):
        log.info("using %d of %d feature rows that carry MOS labels", len(indices), len(meta["rows"]))
    return matrix[indices], mos


# -- reports ------------------------------------------------------------------


@dataclass
class EvalReport:
    kind: str  # "nr", "fr", or "ablation"
    protocol: dict = field(default_factory=dict)
    datasets: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "kind": self.kind,
            "protocol": self.protocol,
            "datasets": self.datasets,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        if data.get("format") != REPORT_FORMAT:
            raise DataError(f"not a {REPORT_FORMAT} payload")
        return cls(
            kind=data.get("kind", "nr"),
            protocol=data.get("protocol", {}),
            datasets=data.get("datasets", {}),
            meta=data.get("meta", {}),
        )


def _protocol_dict(protocol: SplitProtocol) -> dict:
    return {
        "train_fraction": protocol.train_fraction,
        "iterations": protocol.iterations,
        "effective_iterations": protocol.effective_iterations,
        "seed": protocol.seed,
        "large_dataset": protocol.large_dataset,
    }


def _dataset_entry(result: ProtocolResult) -> dict:
    last = result.iterations[-1]
    return {
        "iterations": [
            {
                "index": it.index,
                "srcc": float(it.srcc),
                "plcc": float(it.plcc),
                "hyperparameters": {k: float(v) for k, v in it.hyperparameters.items()},
            }
            for it in result.iterations
        ],
        "median_srcc": result.median_srcc,
        "median_plcc": result.median_plcc,
        "std_srcc": result.std_srcc,
        "std_plcc": result.std_plcc,
        "scatter": {
            "mos": [float(v) for v in last.mos_test],
            "predicted": [float(v) for v in last.predictions],
        },
    }


def evaluate_nr(table: DatasetTable, checkpoint, protocol: SplitProtocol, *, grid=None, scales=SCALES) -> ProtocolResult:
    """Fused features for every row, then the split-and-median protocol.

    Feature extraction is per-image and fit-free, so it safely precedes the
    splits; standardization and hyperparameter search happen inside fit() on
    the training rows of each iteration only.
    """
    ckpt = _as_checkpoint(checkpoint)
    features = extract_fused_matrix((load_image(p) for p in table.paths), ckpt, scales)
    return run_protocol(features, table.mos, protocol, grid=grid)


def build_nr_report(tables, checkpoint, protocol: SplitProtocol, *, grid=None, scales=SCALES) -> EvalReport:
    ckpt = _as_checkpoint(checkpoint)
    report = EvalReport(kind="nr", protocol=_protocol_dict(protocol))
    report.meta = {"checkpoint_fingerprint": checkpoint_fingerprint(ckpt), "scales": list(scales)}
    sources = {}
    for table in _as_tables(tables):
        result = evaluate_nr(table, ckpt, protocol, grid=grid, scales=scales)
        report.datasets[table.name] = _dataset_entry(result)
        if table.source is not None:
            sources[table.name] = sha256_file(table.source)
    if sources:
        report.meta["dataset_sha256"] = sources
    return report


def build_fr_report(tables, checkpoint, *, scales=SCALES, logistic_fit=False) -> EvalReport:
    ckpt = _as_checkpoint(checkpoint)
    report = EvalReport(kind="fr")
    report.meta = {"checkpoint_fingerprint": checkpoint_fingerprint(ckpt), "scales": list(scales)}
    sources = {}
    for table in _as_tables(tables):
        if not table.has_references:
            raise DataError(f"dataset {table.name} has no reference_path column; cannot run full-reference scoring")
        pairs = list(zip(table.reference_paths, table.paths))
        fr = evaluate_fr(pairs, table.mos, ckpt, scales=scales, logistic_fit=logistic_fit)
        entry = {
            "count": fr.count,
            # degenerate tables carry null correlations so the JSON stays strict
            "srcc": None if fr.degenerate else float(fr.srcc),
            "plcc": None if fr.degenerate else float(fr.plcc),
            "degenerate": fr.degenerate,
            "scores": [float(v) for v in fr.scores],
            "mos": [float(v) for v in fr.mos],
        }
        if fr.logistic_params is not None:
            entry["logistic_params"] = fr.logistic_params
            entry["plcc_fitted"] = float(fr.plcc_fitted)
        report.datasets[table.name] = entry
        if table.source is not None:
            sources[table.name] = sha256_file(table.source)
    if sources:
        report.meta["dataset_sha256"] = sources
    return report


# -- ablation -----------------------------------------------------------------


def percent_delta(with_value: float, without_value: float) -> float:
    """Relative change of `with_value` over `without_value`, in percent."""
    if without_value == 0:
        raise DataError("percent delta undefined against a zero baseline")
    return 100.0 * (with_value - without_value) / without_value


def format_percent_delta(value: float) -> str:
    """Signed, truncated toward zero to two decimals, e.g. +2.81%."""
    if not math.isfinite(value):
        raise DataError(f"cannot format non-finite percent delta {value!r}")
    truncated = math.trunc(value * 100) / 100
    if truncated == 0:
        truncated = 0.0  # never -0.00%
    return f"{truncated:+.2f}%"


def run_ablation(tables, checkpoint_with, checkpoint_without, protocol: SplitProtocol, *, grid=None, scales=SCALES) -> EvalReport:
    """Same protocol under both checkpoints, plus percent deltas.

    The two checkpoints must share a preset so the fused features are
    comparable. Passing the same checkpoint twice is allowed and yields
    all-zero deltas.
    """
    ckpt_with = _as_checkpoint(checkpoint_with)
    ckpt_without = _as_checkpoint(checkpoint_without)
    if ckpt_with.config.preset != ckpt_without.config.preset:
        raise DataError(
            f"ablation checkpoints use different presets: "
            f"{ckpt_with.config.preset} vs {ckpt_without.config.preset}"
        )
    report = EvalReport(kind="ablation", protocol=_protocol_dict(protocol))
    report.meta = {
        "checkpoint_fingerprint_with": checkpoint_fingerprint(ckpt_with),
        "checkpoint_fingerprint_without": checkpoint_fingerprint(ckpt_without),
        "scales": list(scales),
    }
    for table in _as_tables(tables):
        entry_with = _dataset_entry(evaluate_nr(table, ckpt_with, protocol, grid=grid, scales=scales))
        entry_without = _dataset_entry(evaluate_nr(table, ckpt_without, protocol, grid=grid, scales=scales))
        deltas = {}
        display = {}
        for key, field_name in (("srcc", "median_srcc"), ("plcc", "median_plcc")):
            baseline = entry_without[field_name]
            if baseline == 0:
                # a zero-correlation baseline has no meaningful relative delta
                deltas[key] = None
                display[key] = "n/a"
            else:
                deltas[key] = percent_delta(entry_with[field_name], baseline)
                display[key] = format_percent_delta(deltas[key])
        report.datasets[table.name] = {
            "with": entry_with,
            "without": entry_without,
            "delta_srcc_percent": deltas["srcc"],
            "delta_plcc_percent": deltas["plcc"],
            "display": display,
        }
    return report


# -- serialization ------------------------------------------------------------


def to_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def from_json(text_or_path) -> EvalReport:
    if isinstance(text_or_path, (str, os.PathLike)) and os.path.exists(text_or_path):
        text = Path(text_or_path).read_text()
    else:
        text = str(text_or_path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed report JSON: {exc}") from None
    return EvalReport.from_dict(data)


def _flatten(value, prefix=()):
    """(path tuple, leaf) pairs; dict keys and list indices become segments."""
    if isinstance(value, dict):
        for key in sorted(value):
            if "/" in str(key):
                raise DataError(f"report key {key!r} contains '/', which the CSV encoding reserves")
            yield from _flatten(value[key], prefix + (str(key),))
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _flatten(item, prefix + (str(i),))
    else:
        yield prefix, value


def _unflatten_insert(root, path, leaf):
    node = root
    for key in path[:-1]:
        node = node.setdefault(key, {})
    node[path[-1]] = leaf


def _lists_from_dicts(value):
    """Turn {'0': a, '1': b, ...} nodes back into lists, recursively."""
    if not isinstance(value, dict):
        return value
    value = {k: _lists_from_dicts(v) for k, v in value.items()}
    keys = list(value)
    if keys and all(k.isdigit() for k in keys):
        indices = sorted(int(k) for k in keys)
        if indices == list(range(len(indices))):
            return [value[str(i)] for i in indices]
    return value


def _encode_leaf(value) -> tuple[str, str]:
    if isinstance(value, bool):
        return "bool", "true" if value else "false"
    if isinstance(value, int):
        return "int", repr(value)
    if isinstance(value, float):
        return "float", repr(value)  # repr round-trips doubles exactly
    if value is None:
        return "null", ""
    return "str", str(value)


def _decode_leaf(kind: str, raw: str):
    if kind == "bool":
        return raw == "true"
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "null":
        return None
    return raw


def to_csv(report: EvalReport) -> str:
    """Long-format CSV: one row per leaf of the report tree. Lossless."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("path", "type", "value"))
    for path, leaf in _flatten(report.to_dict()):
        kind, raw = _encode_leaf(leaf)
        writer.writerow(("/".join(path), kind, raw))
    return buf.getvalue()


def from_csv(text_or_path) -> EvalReport:
    if isinstance(text_or_path, (str, os.PathLike)) and os.path.exists(text_or_path):
        text = Path(text_or_path).read_text()
    else:
        text = str(text_or_path)
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != list(("path", "type", "value")):
        raise DataError("not a triqa report CSV: unexpected header")
    root: dict = {}
    for row in reader:
        if len(row) != 3:
            raise DataError(f"malformed report CSV row: {row!r}")
        path, kind, raw = row
        _unflatten_insert(root, tuple(path.split("/")), _decode_leaf(kind, raw))
    return EvalReport.from_dict(_lists_from_dicts(root))


def to_table_text(report: EvalReport) -> str:
    """Aligned text table of the headline numbers."""
    lines = []
    if report.kind == "ablation":
        rows = [("dataset", "variant", "SRCC", "PLCC", "delta")]
        for name, entry in report.datasets.items():
            rows.append(
                (name, "with-combined", _fmt(entry["with"]["median_srcc"]), _fmt(entry["with"]["median_plcc"]), "")
            )
            rows.append(
                (
                    name,
                    "without-combined",
                    _fmt(entry["without"]["median_srcc"]),
                    _fmt(entry["without"]["median_plcc"]),
                    "",
                )
            )
            rows.append((name, "delta", entry["display"]["srcc"], entry["display"]["plcc"], "srcc/plcc"))
    elif report.kind == "fr":
        rows = [("dataset", "n", "SRCC", "PLCC", "")]
        for name, entry in report.datasets.items():
            note = "degenerate" if entry.get("degenerate") else ""
            rows.append((name, str(entry["count"]), _fmt(entry["srcc"]), _fmt(entry["plcc"]), note))
    else:
        rows = [("dataset", "SRCC median±std", "PLCC median±std", "iters", "")]
        for name, entry in report.datasets.items():
            rows.append(
                (
                    name,
                    f"{_fmt(entry['median_srcc'])} ± {_fmt(entry['std_srcc'])}",
                    f"{_fmt(entry['median_plcc'])} ± {_fmt(entry['std_plcc'])}",
                    str(len(entry["iterations"])),
                    "",
                )
            )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    return "n/a" if x is None or not math.isfinite(x) else f"{x:.4f}"


def _num(x) -> float:
    return math.nan if x is None else float(x)


def emit_plots(report: EvalReport, out_prefix) -> list[Path]:
    """PNG summary bars plus a predicted-vs-MOS scatter per dataset."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    names = list(report.datasets)
    if report.kind == "nr":
        srccs = [_num(report.datasets[n]["median_srcc"]) for n in names]
        plccs = [_num(report.datasets[n]["median_plcc"]) for n in names]
    elif report.kind == "fr":
        srccs = [_num(report.datasets[n]["srcc"]) for n in names]
        plccs = [_num(report.datasets[n]["plcc"]) for n in names]
    else:
        srccs = [_num(report.datasets[n]["with"]["median_srcc"]) for n in names]
        plccs = [_num(report.datasets[n]["with"]["median_plcc"]) for n in names]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names) + 2), 3.2))
    pos = np.arange(len(names))
    ax.bar(pos - 0.18, srccs, width=0.36, label="SRCC")
    ax.bar(pos + 0.18, plccs, width=0.36, label="PLCC")
    ax.set_xticks(pos, names, rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_title("median correlation per dataset" if report.kind != "fr" else "correlation per dataset")
    ax.legend()
    fig.tight_layout()
    summary_path = out_prefix.with_name(out_prefix.name + "-summary.png")
    fig.savefig(summary_path, dpi=120)
    plt.close(fig)
    written.append(summary_path)

    for name in names:
        entry = report.datasets[name]
        if report.kind == "nr":
            x, y = entry["scatter"]["mos"], entry["scatter"]["predicted"]
            labels = ("MOS", "predicted MOS")
        elif report.kind == "fr":
            x, y = entry["mos"], entry["scores"]
            labels = ("MOS", "cosine score")
        else:
            x, y = entry["with"]["scatter"]["mos"], entry["with"]["scatter"]["predicted"]
            labels = ("MOS", "predicted MOS (with-combined)")
        fig, ax = plt.subplots(figsize=(3.6, 3.6))
        ax.scatter(x, y, s=14, alpha=0.75)
        ax.set_xlabel(labels[0])
        ax.set_ylabel(labels[1])
        ax.set_title(name)
        fig.tight_layout()
        scatter_path = out_prefix.with_name(f"{out_prefix.name}-scatter-{name}.png")
        fig.savefig(scatter_path, dpi=120)
        plt.close(fig)
        written.append(scatter_path)
    return written


REPORT_FORMATS = ("json", "csv", "table-text", "plots")


def emit_report(report: EvalReport, path, fmt: str = "json") -> list[Path]:
    """Write the report in one format; returns the paths written."""
    if fmt not in REPORT_FORMATS:
        raise UsageError(f"unknown report format {fmt!r}; choose from {', '.join(REPORT_FORMATS)}")
    path = Path(path)
    if fmt == "plots":
        return emit_plots(report, path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path.write_text(to_json(report))
    elif fmt == "csv":
        path.write_text(to_csv(report))
    else:
        path.write_text(to_table_text(report))
    return [path]


def _as_checkpoint(checkpoint):
    from .encoder import Checkpoint, load_checkpoint

    if isinstance(checkpoint, Checkpoint):
        return checkpoint
    return load_checkpoint(checkpoint)


def _as_tables(tables):
    if isinstance(tables, DatasetTable):
        return [tables]
    tables = list(tables)
    if not tables:
        raise DataError("no dataset tables to evaluate")
    return tables
