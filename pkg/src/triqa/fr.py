"""Training-free full-reference scoring.

A trained quality encoder already orders distortion severity, so comparing a
distorted image against its pristine reference needs no further fitting: the
score is the cosine similarity between their pooled quality features. Higher
means closer to the reference.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .features import SCALES, extract_quality_features
from .images import ensure_image, load_image
from .metrics import plcc, srcc


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DataError(f"vector length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if np.array_equal(a, b):
        # identical inputs score exactly 1.0, no rounding residue
        if not np.any(a):
            raise DataError("cosine similarity of zero vectors is undefined")
        return 1.0
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise DataError("cosine similarity of a zero vector is undefined")
    value = float(np.dot(a, b) / (norm_a * norm_b))
    return min(1.0, max(-1.0, value))


def _resolve_image(image) -> np.ndarray:
    if isinstance(image, (str, os.PathLike)):
        return load_image(image)
    return ensure_image(image)


def _resolve_checkpoint(checkpoint):
    from .encoder import Checkpoint, load_checkpoint

    if isinstance(checkpoint, Checkpoint):
        return checkpoint
    return load_checkpoint(checkpoint)


def score_fr(reference, distorted, checkpoint, *, scales=SCALES) -> float:
    """Cosine similarity of quality features; 1.0 means indistinguishable."""
    ref = _resolve_image(reference)
    dist = _resolve_image(distorted)
    if ref.shape != dist.shape:
        raise DataError(f"reference/distorted shape mismatch: {ref.shape} vs {dist.shape}")
    if np.array_equal(ref, dist):
        return 1.0
    ckpt = _resolve_checkpoint(checkpoint)
    f_ref = extract_quality_features(ref, ckpt, scales=scales)
    f_dist = extract_quality_features(dist, ckpt, scales=scales)
    return cosine_similarity(f_ref.values, f_dist.values)


def _logistic4(x, b1, b2, b3, b4):
    from scipy.special import expit

    return (b1 - b2) * expit((x - b3) / abs(b4)) + b2


def fit_logistic(scores, mos):
    """4-parameter monotone remap of raw scores onto the MOS scale.

    Returns (params, remapped) or (None, None) when the fit does not
    converge; raw-score correlations remain valid either way.
    """
    import warnings

    from scipy.optimize import OptimizeWarning, curve_fit

    scores = np.asarray(scores, dtype=np.float64)
    mos = np.asarray(mos, dtype=np.float64)
    spread = float(np.std(scores))
    if spread == 0.0:
        return None, None
    p0 = [float(np.max(mos)), float(np.min(mos)), float(np.median(scores)), spread]
    try:
        with warnings.catch_warnings():
            # we discard the covariance, so its estimability is irrelevant
            warnings.simplefilter("ignore", OptimizeWarning)
            params, _ = curve_fit(_logistic4, scores, mos, p0=p0, maxfev=20_000)
    except (RuntimeError, ValueError):
        return None, None
    remapped = _logistic4(scores, *params)
    if not np.isfinite(remapped).all():
        return None, None
    return [float(p) for p in params], remapped


@dataclass
class FRReport:
    scores: np.ndarray
    mos: np.ndarray
    srcc: float
    plcc: float
    degenerate: bool = False  # constant MOS or constant scores
    logistic_params: list | None = None
    plcc_fitted: float | None = None

    @property
    def count(self) -> int:
        return int(self.scores.shape[0])


def evaluate_fr(pairs, mos, checkpoint, *, scales=SCALES, logistic_fit=False) -> FRReport:
    """Score (reference, distorted) pairs and correlate against MOS.

    A degenerate table (constant MOS, or scores that collapse to a single
    value) yields NaN correlations with `degenerate` set rather than an
    exception, so batch evaluation over many tables keeps going.
    """
    pairs = list(pairs)
    mos = np.asarray(mos, dtype=np.float64).ravel()
    if len(pairs) != mos.shape[0]:
        raise DataError(f"pairs/mos length mismatch: {len(pairs)} vs {mos.shape[0]}")
    if len(pairs) < 2:
        raise DataError("full-reference evaluation needs at least 2 pairs")
    if not np.isfinite(mos).all():
        raise DataError("non-finite MOS values")

    ckpt = _resolve_checkpoint(checkpoint)
    scores = np.array([score_fr(ref, dist, ckpt, scales=scales) for ref, dist in pairs], dtype=np.float64)

    degenerate = bool(np.all(mos == mos[0]) or np.all(scores == scores[0]))
    if degenerate:
        return FRReport(scores=scores, mos=mos, srcc=math.nan, plcc=math.nan, degenerate=True)

    report = FRReport(scores=scores, mos=mos, srcc=srcc(scores, mos), plcc=plcc(scores, mos))
    if logistic_fit:
        params, remapped = fit_logistic(scores, mos)
        if params is not None:
            report.logistic_params = params
            report.plcc_fitted = plcc(remapped, mos)
    return report
