"""Seeded synthetic pristine images and toy labeled corpora.

Benchmarks like CLIVE or KonIQ cannot be bundled, so tests and demos run on
procedurally generated content: a few oriented gratings, soft-edged ellipses,
and band-limited texture, mixed per channel. The images have enough structure
(edges, color variety, texture) for every distortion ladder to bite, and the
value range leaves headroom so brightness shifts do not saturate instantly.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .images import from_float, save_image
from .seeds import derive, make_rng

DEFAULT_SIZE = 288

# Output range for pristine pixels; keeps +-46 shifts mostly unclipped.
_LO, _HI = 10.0, 205.0


def synth_image(seed: int, size: int = DEFAULT_SIZE) -> np.ndarray:
    """Deterministic colorful test image, (size, size, 3) uint8."""
    rng = make_rng(seed)
    axis = np.arange(size, dtype=np.float64) / size
    yy = axis[:, None]
    xx = axis[None, :]

    canvas = np.zeros((size, size, 3), dtype=np.float64)
    for _ in range(6):
        theta = rng.uniform(0.0, np.pi)
        freq = rng.uniform(1.5, 9.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        carrier = np.cos(theta) * xx + np.sin(theta) * yy
        wave = np.cos(2.0 * np.pi * freq * carrier + phase)
        canvas += wave[:, :, None] * rng.uniform(-1.0, 1.0, size=3)

    for _ in range(4):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        ry, rx = rng.uniform(0.08, 0.30, size=2)
        d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        alpha = 1.0 / (1.0 + np.exp(np.clip((d - 1.0) * 20.0, -60.0, 60.0)))
        canvas += alpha[:, :, None] * rng.uniform(-1.5, 1.5, size=3)

    texture = rng.normal(0.0, 1.0, size=(size, size, 3))
    canvas += 0.25 * gaussian_filter(texture, sigma=(1.2, 1.2, 0.0))

    lo, hi = canvas.min(), canvas.max()
    canvas = (canvas - lo) / max(hi - lo, 1e-9)
    return from_float(canvas * (_HI - _LO) + _LO)


def write_corpus(
    images_dir: str | Path,
    n_images: int,
    *,
    size: int = DEFAULT_SIZE,
    seed: int = 0,
    prefix: str = "synth",
) -> list[str]:
    """Write `n_images` pristine PNGs and return their image ids (sorted)."""
    images_dir = Path(images_dir)
    ids = []
    for index in range(n_images):
        image_id = f"{prefix}-{index:03d}"
        save_image(synth_image(derive(seed, "synth", index), size=size), images_dir / f"{image_id}.png")
        ids.append(image_id)
    return ids


def write_toy_mos_dataset(
    images_dir: str | Path,
    table_path: str | Path,
    *,
    n_refs: int = 4,
    levels: tuple[int, ...] = (1, 2, 3, 4, 5),
    seed: int = 0,
    size: int = DEFAULT_SIZE,
    with_reference: bool = False,
) -> Path:
    """Build a small labeled corpus: distorted PNGs plus a MOS CSV.

    Each reference content is rendered at every requested level of a cycling
    distortion type, and the MOS is a decreasing function of level with a
    small content offset, so quality models have a real (if easy) target.
    Returns the CSV path. Columns: path, mos and, when `with_reference`,
    reference_path pointing at the pristine render.
    """
    from .distortions import DistortionSpec, apply_distortion, distortion_catalog

    images_dir = Path(images_dir)
    table_path = Path(table_path)
    table_path.parent.mkdir(parents=True, exist_ok=True)

    def rel(name: str) -> str:
        # record paths relative to the CSV so the table loads from anywhere
        return os.path.relpath(images_dir / name, table_path.parent)

    types = sorted({spec.distortion_id for spec in distortion_catalog()[0]})
    rows = []
    for ref_index in range(n_refs):
        ref_seed = derive(seed, "toy-ref", ref_index)
        pristine = synth_image(ref_seed, size=size)
        ref_name = f"ref-{ref_index:02d}.png"
        save_image(pristine, images_dir / ref_name)
        dist_type = types[ref_index % len(types)]
        for level in levels:
            spec = DistortionSpec(distortion_id=dist_type, level=level)
            distorted = apply_distortion(pristine, spec, derive(ref_seed, dist_type))
            name = f"ref-{ref_index:02d}__{dist_type}__l{level}.png"
            save_image(distorted, images_dir / name)
            mos = 90.0 - 15.0 * level + 2.0 * ref_index
            row = {"path": rel(name), "mos": f"{mos:.3f}"}
            if with_reference:
                row["reference_path"] = rel(ref_name)
            rows.append(row)

    fieldnames = ["path", "mos"] + (["reference_path"] if with_reference else [])
    with open(table_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    return table_path
