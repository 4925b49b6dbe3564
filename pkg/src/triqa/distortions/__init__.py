"""Synthetic image degradations: 20 types, 5 monotone severity levels each."""

from .registry import (
    DistortionGrouping,
    DistortionSpec,
    MIN_DISTORT_SIDE,
    apply_chain,
    apply_distortion,
    default_grouping,
    distortion_catalog,
    distortion_ids,
    ladder,
    load_grouping,
)

__all__ = [
    "DistortionGrouping",
    "DistortionSpec",
    "MIN_DISTORT_SIDE",
    "apply_chain",
    "apply_distortion",
    "default_grouping",
    "distortion_catalog",
    "distortion_ids",
    "ladder",
    "load_grouping",
]
