"""Content and quality feature extraction and their fusion.

The regression features are pooled backbone activations, not the 128-d
projection used by the loss: the quality branch is read at full and at half
resolution (bilinear downsample with antialiasing, fixed kernel), the frozen
content branch at the same two scales, and the fused vector is the
concatenation with content first. Under the paper-scale preset that is
1,536 + 1,536 = 3,072 dimensions; every preset satisfies
fused = content + quality-full + quality-half.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .encoder import Checkpoint, _to_tensor
from .errors import DataError, NumericalError
from .images import ensure_image

SCALES = ("full", "half")

FEATURES_FORMAT = "triqa-features"
FEATURES_VERSION = 1


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    provenance: str  # content | quality | quality-full | quality-half | fused

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def _validated_scales(scales) -> tuple[str, ...]:
    scales = tuple(scales)
    if not scales or any(s not in SCALES for s in scales):
        raise DataError(f"scales must be a non-empty subset of {SCALES}, got {scales!r}")
    return scales


def _pooled(model, img: np.ndarray, scales: tuple[str, ...]) -> np.ndarray:
    ensure_image(img)
    t = _to_tensor(img)
    parts = []
    with torch.no_grad():
        for scale in scales:
            x = t
            if scale == "half":
                x = F.interpolate(t, scale_factor=0.5, mode="bilinear", antialias=True, align_corners=False)
            if min(x.shape[2], x.shape[3]) < model.min_input_side:
                raise DataError(
                    f"image {img.shape[1]}x{img.shape[0]} below backbone minimum "
                    f"{model.min_input_side} at {scale} scale"
                )
            parts.append(model.features(x).squeeze(0).numpy())
    vec = np.concatenate(parts).astype(np.float32)
    if not np.isfinite(vec).all():
        raise NumericalError("non-finite features")
    return vec


def extract_quality_features(img: np.ndarray, ckpt: Checkpoint, scales=SCALES) -> FeatureVector:
    """Pooled pre-projection features of the trained branch, full + half scale."""
    scales = _validated_scales(scales)
    provenance = "quality" if len(scales) == 2 else f"quality-{scales[0]}"
    return FeatureVector(values=_pooled(ckpt.quality_model(), img, scales), provenance=provenance)


def extract_content_features(img: np.ndarray, ckpt: Checkpoint, scales=SCALES) -> FeatureVector:
    """Pooled features of the frozen content branch at the same scales."""
    scales = _validated_scales(scales)
    return FeatureVector(values=_pooled(ckpt.content_model(), img, scales), provenance="content")


def fuse(content: FeatureVector, quality: FeatureVector) -> FeatureVector:
    """Concatenate content then quality features."""
    if content.provenance != "content":
        raise DataError(f"expected content features, got provenance {content.provenance!r}")
    if not quality.provenance.startswith("quality"):
        raise DataError(f"expected quality features, got provenance {quality.provenance!r}")
    return FeatureVector(values=np.concatenate([content.values, quality.values]), provenance="fused")


def extract_fused(img: np.ndarray, ckpt: Checkpoint, scales=SCALES) -> FeatureVector:
    return fuse(extract_content_features(img, ckpt, scales), extract_quality_features(img, ckpt, scales))


def extract_fused_matrix(images, ckpt: Checkpoint, scales=SCALES) -> np.ndarray:
    """(N, fused dim) float32 matrix for a sequence of images."""
    rows = [extract_fused(img, ckpt, scales).values for img in images]
    if not rows:
        raise DataError("no images to extract features from")
    return np.stack(rows)


def fused_dim(ckpt: Checkpoint, scales=SCALES) -> int:
    n_scales = len(_validated_scales(scales))
    per_branch = ckpt.quality_model().feature_dim * n_scales
    return 2 * per_branch


# -- feature files: .npy matrix + .json sidecar ------------------------------


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_features(path: str | os.PathLike, matrix: np.ndarray, meta: dict) -> Path:
    """Write the matrix and a sidecar describing provenance and inputs."""
    path = Path(path)
    if path.suffix != ".npy":
        path = path.with_suffix(".npy")
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    np.save(path, matrix)
    sidecar = {
        "format": FEATURES_FORMAT,
        "version": FEATURES_VERSION,
        "count": int(matrix.shape[0]),
        "dim": int(matrix.shape[1]),
        **meta,
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    return path


def load_features(path: str | os.PathLike) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if path.suffix != ".npy":
        path = path.with_suffix(".npy")
    if not path.is_file():
        raise DataError(f"feature file not found: {path}")
    sidecar_path = _sidecar_path(path)
    if not sidecar_path.is_file():
        raise DataError(f"feature sidecar not found: {sidecar_path}")
    matrix = np.load(path)
    meta = json.loads(sidecar_path.read_text())
    if meta.get("format") != FEATURES_FORMAT:
        raise DataError(f"not a triqa feature sidecar: {sidecar_path}")
    if matrix.shape != (meta["count"], meta["dim"]):
        raise DataError(
            f"feature matrix shape {matrix.shape} disagrees with sidecar "
            f"({meta['count']}, {meta['dim']}): {path}"
        )
    return matrix, meta
