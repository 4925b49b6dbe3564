"""Distortion registry: the roster, severity ladders, grouping, application.

Severity ladders were tuned against the PSNR oracle: for every registered
type, PSNR to the pristine image is non-increasing from level 1 to level 5
on a fixed synthetic validation set (strictly decreasing almost everywhere).
Level parameters are data, not behavior; changing a ladder invalidates any
previously rendered corpus but not the code.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..images import ensure_image, from_float
from ..seeds import derive, make_rng
from . import ops

LEVELS = (1, 2, 3, 4, 5)

# Smallest image side any operator supports (largest kernel/footprint wins).
MIN_DISTORT_SIDE = 32

# name -> (operator, level-1..5 parameters)
_REGISTRY: dict[str, tuple] = {
    "gaussian-blur": (ops.gaussian_blur, (0.8, 1.6, 2.6, 4.0, 6.0)),
    "lens-blur": (ops.lens_blur, (1.5, 2.5, 4.0, 6.0, 8.0)),
    "motion-blur": (ops.motion_blur, (5, 9, 13, 17, 21)),
    "color-diffuse": (ops.color_diffuse, (3.5, 6.5, 11.0, 14.0, 20.0)),
    "color-shift": (ops.color_shift, (1, 2, 4, 8, 12)),
    "color-quantization": (ops.color_quantize, (48, 32, 20, 12, 6)),
    "color-saturate-1": (ops.color_desaturate, (0.7, 0.5, 0.3, 0.15, 0.0)),
    "color-saturate-2": (ops.color_oversaturate, (1.6, 2.1, 2.8, 3.8, 5.2)),
    "jpeg": (ops.jpeg, (60, 38, 24, 12, 6)),
    "jpeg2000": (ops.jpeg2000, (25.0, 45.0, 80.0, 140.0, 240.0)),
    "brighten": (ops.brighten, (0.3, 0.6, 1.0, 1.5, 2.2)),
    "darken": (ops.darken, (0.3, 0.6, 1.0, 1.5, 2.2)),
    "mean-shift": (ops.mean_shift, (8.0, 16.0, 25.0, 35.0, 46.0)),
    "white-noise": (ops.white_noise, (5.0, 10.0, 17.0, 27.0, 40.0)),
    "white-noise-color": (ops.white_noise_color, (10.0, 20.0, 32.0, 48.0, 68.0)),
    "impulse-noise": (ops.impulse_noise, (0.01, 0.025, 0.05, 0.10, 0.18)),
    "multiplicative-noise": (ops.multiplicative_noise, (0.06, 0.11, 0.18, 0.28, 0.42)),
    "denoise-oversmooth": (ops.denoise_oversmooth, ((4.0, 0.8), (7.0, 1.3), (10.0, 1.8), (14.0, 2.4), (18.0, 3.2))),
    "jitter": (ops.jitter, (0.6, 1.1, 1.7, 2.4, 3.2)),
    "pixelate": (ops.pixelate, (0.62, 0.45, 0.32, 0.22, 0.15)),
}


def distortion_ids() -> list[str]:
    """Registered distortion names, in declaration order."""
    return list(_REGISTRY)


def ladder(distortion_id: str) -> tuple:
    """The five level parameters for one distortion type."""
    _lookup(distortion_id)
    return _REGISTRY[distortion_id][1]


def _lookup(distortion_id: str):
    try:
        return _REGISTRY[distortion_id]
    except KeyError:
        raise DataError(f"unsupported distortion_id: {distortion_id!r}") from None


@dataclass(frozen=True)
class DistortionSpec:
    """One distortion type at one severity level."""

    distortion_id: str
    level: int
    group_id: str | None = None

    def __post_init__(self):
        _lookup(self.distortion_id)
        if self.level not in LEVELS:
            raise DataError(f"level must be in {LEVELS}, got {self.level!r}")


@dataclass(frozen=True)
class DistortionGrouping:
    """Partition of the roster into families; combined triplets pair across groups."""

    groups: dict[str, tuple[str, ...]]
    version: str = "unversioned"
    _group_of: dict[str, str] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seen: dict[str, str] = {}
        for group_id, members in self.groups.items():
            for member in members:
                if member not in _REGISTRY:
                    raise DataError(
                        f"grouping {self.version!r} references unregistered distortion_id {member!r}"
                    )
                if member in seen:
                    raise DataError(f"distortion_id {member!r} appears in groups {seen[member]!r} and {group_id!r}")
                seen[member] = group_id
        missing = [d for d in _REGISTRY if d not in seen]
        if missing:
            raise DataError(f"grouping {self.version!r} omits distortion_ids: {missing}")
        object.__setattr__(self, "_group_of", seen)

    def group_of(self, distortion_id: str) -> str:
        if distortion_id not in self._group_of:
            raise DataError(f"distortion_id not in grouping {self.version!r}: {distortion_id!r}")
        return self._group_of[distortion_id]

    def cross_group_pairs(self) -> list[tuple[str, str]]:
        """All (first, second) distortion pairs spanning two different groups.

        Group pairs are unordered; within a pair the member of the
        lexicographically first group comes first, fixing application order
        for combined chains. Members keep their declared order.
        """
        group_ids = sorted(self.groups)
        pairs: list[tuple[str, str]] = []
        for i, ga in enumerate(group_ids):
            for gb in group_ids[i + 1 :]:
                for a in self.groups[ga]:
                    for b in self.groups[gb]:
                        pairs.append((a, b))
        return pairs


def load_grouping(path: str | Path | None = None) -> DistortionGrouping:
    """Read a grouping config file; defaults to the packaged table."""
    parser = configparser.ConfigParser()
    if path is None:
        text = (resources.files("triqa") / "data" / "default_grouping.ini").read_text()
    else:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"grouping file not found: {path}")
        text = path.read_text()
    parser.read_string(text)
    if not parser.has_section("groups"):
        raise DataError("grouping file missing [groups] section")
    version = parser.get("grouping", "version", fallback="unversioned")
    groups = {
        group_id: tuple(m.strip() for m in members.split(",") if m.strip())
        for group_id, members in parser.items("groups")
    }
    return DistortionGrouping(groups=groups, version=version)


@lru_cache(maxsize=1)
def default_grouping() -> DistortionGrouping:
    return load_grouping(None)


def distortion_catalog(grouping: DistortionGrouping | None = None):
    """All (type, level) templates plus the active grouping.

    Returns (specs, grouping): 20 types x 5 levels = 100 specs under the
    default registry, each tagged with its group.
    """
    grouping = grouping or default_grouping()
    specs = [
        DistortionSpec(distortion_id=d, level=lv, group_id=grouping.group_of(d))
        for d in _REGISTRY
        for lv in LEVELS
    ]
    return specs, grouping


def apply_distortion(img: np.ndarray, spec: DistortionSpec, seed: int) -> np.ndarray:
    """Apply one distortion at one level. Pure: the input is never mutated.

    Stochastic operators are fully determined by `seed`. The result is
    quantized to uint8 exactly once, inside this call.
    """
    ensure_image(img)
    if min(img.shape[0], img.shape[1]) < MIN_DISTORT_SIDE:
        raise DataError(
            f"image {img.shape[1]}x{img.shape[0]} below minimum side {MIN_DISTORT_SIDE} "
            f"for distortion kernels"
        )
    op, params = _lookup(spec.distortion_id)
    if spec.level not in LEVELS:
        raise DataError(f"level must be in {LEVELS}, got {spec.level!r}")
    out = from_float(op(img, params[spec.level - 1], make_rng(seed)))
    if out.shape != img.shape:
        raise DataError(f"{spec.distortion_id} changed image shape: {img.shape} -> {out.shape}")
    return out


def apply_chain(img: np.ndarray, chain, seed: int) -> np.ndarray:
    """Apply distortions left to right; an empty chain returns a copy.

    Step i uses seed `seed` for i=0 and `derive(seed, i)` after, so a chain
    sharing a prefix with another chain (same seed) renders that prefix
    bit-identically. The default pipeline uses chains of length 0 to 2.
    """
    ensure_image(img)
    out = img.copy()
    for i, spec in enumerate(chain):
        out = apply_distortion(out, spec, seed if i == 0 else derive(seed, i))
    return out
