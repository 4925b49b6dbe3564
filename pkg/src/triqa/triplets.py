"""Rank-ordered triplet enumeration, manifests, and rendering.

A degradation chain is a tuple of (distortion_id, level) steps, length 0 to 2;
the empty chain is the pristine image. Chains are comparable when one is a
severity extension of the other: the same single distortion at a higher
level, or a strict prefix with extra steps appended. Every manifest entry is
a triplet of chains totally ordered this way, so the rank labels the encoder
trains on are correct by construction, not by annotation.

Manifests are symbolic (no pixels): one JSON line per triplet after a header
line, canonical key order, so identical inputs build byte-identical files.
"""

from __future__ import annotations

import io
import itertools
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distortions import DistortionGrouping, DistortionSpec, apply_chain, default_grouping, distortion_ids
from .errors import DataError, UsageError
from .images import MIN_RENDER_SIDE, ensure_image
from .seeds import STREAM_FORGE, derive

Chain = tuple[tuple[str, int], ...]

MANIFEST_FORMAT = "triqa-manifest"
MANIFEST_VERSION = 1

SINGLE_PER_IMAGE = 400
COMBINED_PER_IMAGE = 608

DEFAULT_POSITIVE_LEVELS = (1, 3)
DEFAULT_ADDED_LEVELS = (1, 3)


@dataclass(frozen=True, slots=True)
class TripletSpec:
    """Three degradation chains with anchor least and negative most degraded."""

    image_id: str
    anchor: Chain
    positive: Chain
    negative: Chain
    kind: str  # "single" | "combined"
    seed: int  # per-image render seed; chain seeds derive from it


def severity_precedes(first: Chain, second: Chain) -> bool:
    """True when `second` is a strict severity extension of `first`."""
    if first == second:
        return False
    if len(first) < len(second) and second[: len(first)] == first:
        return True
    if len(first) == 1 and len(second) == 1:
        (d1, l1), (d2, l2) = first[0], second[0]
        return d1 == d2 and l1 < l2
    return False


def validate_triplet(spec: TripletSpec) -> None:
    """Structural ordering soundness for one entry."""
    if not severity_precedes(spec.anchor, spec.positive):
        raise DataError(f"anchor does not precede positive: {spec}")
    if not severity_precedes(spec.anchor, spec.negative) or not severity_precedes(spec.positive, spec.negative):
        raise DataError(f"positive does not precede negative: {spec}")
    if spec.kind == "single":
        ids = {step[0] for chain in (spec.anchor, spec.positive, spec.negative) for step in chain}
        if len(ids) != 1:
            raise DataError(f"single triplet spans multiple distortion_ids: {spec}")
    elif spec.kind == "combined":
        if spec.anchor != () or len(spec.positive) != 1 or len(spec.negative) != 2:
            raise DataError(f"combined triplet has wrong chain shapes: {spec}")
    else:
        raise DataError(f"unknown triplet kind: {spec.kind!r}")


def enumerate_single_triplets(n_ranks: int) -> list[tuple[int, int, int]]:
    """All strictly increasing rank triples over {0..n_ranks-1}, lexicographic.

    With n_ranks=6 the ranks index {pristine, level 1..5} and the count is
    C(6,3) = 20.
    """
    if n_ranks < 3:
        raise UsageError(f"n_ranks must be >= 3, got {n_ranks}")
    return list(itertools.combinations(range(n_ranks), 3))


def _validated_levels(levels, name: str) -> tuple[int, ...]:
    levels = tuple(levels)
    if not levels:
        raise UsageError(f"{name} must be non-empty")
    for lv in levels:
        if lv not in (1, 2, 3, 4, 5):
            raise UsageError(f"{name} must be a subset of {{1..5}}, got {lv!r}")
    return levels


def enumerate_combined_triplets(
    grouping: DistortionGrouping | None = None,
    positive_levels=DEFAULT_POSITIVE_LEVELS,
    added_levels=DEFAULT_ADDED_LEVELS,
) -> list[TripletSpec]:
    """Cross-group combined triplet templates (image_id and seed unbound).

    For every cross-group distortion pair (first, second) and every level
    combination: anchor pristine, positive = first at a positive level,
    negative = that chain extended by second at an added level. The default
    grouping and level sets yield 152 x 4 = 608 templates.
    """
    grouping = grouping or default_grouping()
    positive_levels = _validated_levels(positive_levels, "positive_levels")
    added_levels = _validated_levels(added_levels, "added_levels")
    templates = []
    for first, second in grouping.cross_group_pairs():
        for lp in positive_levels:
            positive = ((first, lp),)
            for la in added_levels:
                templates.append(
                    TripletSpec(
                        image_id="",
                        anchor=(),
                        positive=positive,
                        negative=positive + ((second, la),),
                        kind="combined",
                        seed=0,
                    )
                )
    return templates


def _single_templates() -> list[tuple[Chain, Chain, Chain]]:
    rank_triples = enumerate_single_triplets(6)
    chains_by_rank: dict[str, list[Chain]] = {
        d: [()] + [((d, lv),) for lv in (1, 2, 3, 4, 5)] for d in distortion_ids()
    }
    templates = []
    for d in distortion_ids():
        ranks = chains_by_rank[d]
        for i, j, k in rank_triples:
            templates.append((ranks[i], ranks[j], ranks[k]))
    return templates


@dataclass
class Manifest:
    entries: list[TripletSpec]
    image_ids: tuple[str, ...]
    grouping_version: str
    master_seed: int
    include_combined: bool
    counts: dict
    extras: dict | None = None  # free-form provenance (e.g. corpus fingerprint)

    def __post_init__(self):
        self.image_ids = tuple(self.image_ids)


def recount(entries) -> dict:
    single = sum(1 for e in entries if e.kind == "single")
    combined = len(entries) - single
    return {"single": single, "combined": combined, "total": single + combined}


def build_manifest(
    image_ids,
    grouping: DistortionGrouping | None = None,
    include_combined: bool = True,
    master_seed: int = 0,
    *,
    positive_levels=DEFAULT_POSITIVE_LEVELS,
    added_levels=DEFAULT_ADDED_LEVELS,
    extras: dict | None = None,
) -> Manifest:
    """Enumerate every triplet for a corpus: 400 single (+608 combined) per image.

    Deterministic given its inputs; the per-image render seed is derived from
    the master seed and the image id, so adding or removing corpus images
    never changes the triplets of the others.
    """
    image_ids = list(image_ids)
    if not image_ids:
        raise DataError("image_ids must be non-empty")
    if len(set(image_ids)) != len(image_ids):
        dupes = sorted({i for i in image_ids if image_ids.count(i) > 1})
        raise DataError(f"duplicate image_ids: {dupes}")
    grouping = grouping or default_grouping()

    single_templates = _single_templates()
    combined_templates = (
        enumerate_combined_triplets(grouping, positive_levels, added_levels) if include_combined else []
    )

    entries: list[TripletSpec] = []
    for image_id in image_ids:
        seed = derive(master_seed, STREAM_FORGE, image_id)
        for a, p, n in single_templates:
            entries.append(TripletSpec(image_id=image_id, anchor=a, positive=p, negative=n, kind="single", seed=seed))
        for t in combined_templates:
            entries.append(
                TripletSpec(
                    image_id=image_id, anchor=t.anchor, positive=t.positive, negative=t.negative,
                    kind="combined", seed=seed,
                )
            )
    return Manifest(
        entries=entries,
        image_ids=tuple(image_ids),
        grouping_version=grouping.version,
        master_seed=master_seed,
        include_combined=include_combined,
        counts=recount(entries),
        extras=extras,
    )


# -- rendering ---------------------------------------------------------------


def _chain_specs(chain: Chain) -> list[DistortionSpec]:
    return [DistortionSpec(distortion_id=d, level=lv) for d, lv in chain]


def chain_seed(spec_seed: int, chain: Chain) -> int:
    """Seed for a chain's first step.

    Derived from the per-image seed and the first distortion's name only, so
    chains sharing a first step (every positive/negative pair of a combined
    triplet, and all levels of one distortion) share their random fields.
    """
    return derive(spec_seed, chain[0][0])


def render_chain(pristine: np.ndarray, chain: Chain, spec_seed: int) -> np.ndarray:
    if not chain:
        return pristine.copy()
    return apply_chain(pristine, _chain_specs(chain), chain_seed(spec_seed, chain))


def render_triplet(spec: TripletSpec, pristine: np.ndarray):
    """Render (anchor, positive, negative) for one manifest entry.

    When the negative chain extends the positive chain (combined triplets),
    the positive render is reused as the negative's intermediate state, which
    both saves work and guarantees the strict-further-degradation property
    bit-exactly.
    """
    ensure_image(pristine, what="pristine")
    if min(pristine.shape[0], pristine.shape[1]) < MIN_RENDER_SIDE:
        raise DataError(
            f"pristine image {pristine.shape[1]}x{pristine.shape[0]} below triplet rendering "
            f"minimum side {MIN_RENDER_SIDE}"
        )
    a_img = render_chain(pristine, spec.anchor, spec.seed)
    p_img = render_chain(pristine, spec.positive, spec.seed)
    k = len(spec.positive)
    if k and len(spec.negative) > k and spec.negative[:k] == spec.positive:
        seed0 = chain_seed(spec.seed, spec.negative)
        n_img = p_img
        for i, step in enumerate(_chain_specs(spec.negative[k:]), start=k):
            n_img = apply_chain(n_img, [step], derive(seed0, i))
    else:
        n_img = render_chain(pristine, spec.negative, spec.seed)
    return a_img, p_img, n_img


# -- JSON-Lines IO -----------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _chain_json(chain: Chain) -> list:
    return [[d, lv] for d, lv in chain]


def _chain_from_json(raw) -> Chain:
    return tuple((str(d), int(lv)) for d, lv in raw)


def manifest_to_bytes(manifest: Manifest) -> bytes:
    header = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "master_seed": manifest.master_seed,
        "grouping_version": manifest.grouping_version,
        "include_combined": manifest.include_combined,
        "image_ids": list(manifest.image_ids),
        "counts": manifest.counts,
    }
    if manifest.extras:
        header["extras"] = manifest.extras
    out = io.StringIO()
    out.write(_dumps(header) + "\n")
    for e in manifest.entries:
        out.write(
            _dumps(
                {
                    "image_id": e.image_id,
                    "kind": e.kind,
                    "a": _chain_json(e.anchor),
                    "p": _chain_json(e.positive),
                    "n": _chain_json(e.negative),
                    "seed": e.seed,
                }
            )
            + "\n"
        )
    return out.getvalue().encode("utf-8")


def write_manifest(manifest: Manifest, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(manifest_to_bytes(manifest))
    return path


def read_manifest(path: str | os.PathLike) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest header is not valid JSON: {path}") from exc
        if header.get("format") != MANIFEST_FORMAT:
            raise DataError(f"not a triplet manifest: {path}")
        entries = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"bad manifest row at {path}:{line_no}") from exc
            entries.append(
                TripletSpec(
                    image_id=row["image_id"],
                    anchor=_chain_from_json(row["a"]),
                    positive=_chain_from_json(row["p"]),
                    negative=_chain_from_json(row["n"]),
                    kind=row["kind"],
                    seed=int(row["seed"]),
                )
            )
    counts = recount(entries)
    if counts != header.get("counts"):
        raise DataError(
            f"manifest counts summary {header.get('counts')} does not match entries {counts}: {path}"
        )
    return Manifest(
        entries=entries,
        image_ids=tuple(header.get("image_ids", ())),
        grouping_version=header.get("grouping_version", "unversioned"),
        master_seed=int(header.get("master_seed", 0)),
        include_combined=bool(header.get("include_combined", True)),
        counts=counts,
        extras=header.get("extras"),
    )
