"""Shared fixtures: tiny corpora and a micro-trained checkpoint.

Everything here is session-scoped because rendering and training are the
expensive parts; individual tests treat these objects as read-only.
"""

from __future__ import annotations

import numpy as np
import pytest

from triqa.encoder import EncoderConfig
from triqa.images import ImageStore
from triqa.seeds import derive
from triqa.synth import synth_image, write_corpus, write_toy_mos_dataset
from triqa.training import train
from triqa.triplets import build_manifest


@pytest.fixture(scope="session")
def pristine():
    """One 288px synthetic image, large enough for triplet rendering."""
    return synth_image(derive(1000, "fixture"), size=288)


@pytest.fixture(scope="session")
def small_image():
    """A 64px image: fine for distortion ops, too small for triplet renders."""
    return synth_image(derive(1000, "small"), size=64)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Two pristine 288px images on disk."""
    d = tmp_path_factory.mktemp("corpus")
    write_corpus(d, 2, size=288, seed=501)
    return d


@pytest.fixture(scope="session")
def store(corpus_dir):
    return ImageStore(corpus_dir)


@pytest.fixture(scope="session")
def micro_manifest():
    """Single-image, single-distortion-kind manifest: 400 entries."""
    return build_manifest(["micro-0"], master_seed=7, include_combined=False)


@pytest.fixture(scope="session")
def micro_store():
    return ImageStore({"micro-0": synth_image(derive(2000, "micro"), size=288)})


@pytest.fixture(scope="session")
def micro_ckpt(micro_manifest, micro_store):
    """A briefly trained desk checkpoint; enough for feature plumbing tests."""
    config = EncoderConfig(preset="desk-scale", crop=96, batch_size=64, epochs=1, seed=7)
    return train(micro_manifest, micro_store, config)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """(images_dir, csv_path) for a small labeled MOS table (15 rows)."""
    root = tmp_path_factory.mktemp("toy")
    images_dir = root / "images"
    csv_path = write_toy_mos_dataset(images_dir, root / "mos.csv", n_refs=3, seed=11, size=288)
    return images_dir, csv_path


@pytest.fixture(scope="session")
def fr_dataset(tmp_path_factory):
    """(images_dir, csv_path) with reference_path columns (10 rows)."""
    root = tmp_path_factory.mktemp("fr")
    images_dir = root / "images"
    csv_path = write_toy_mos_dataset(
        images_dir, root / "pairs.csv", n_refs=2, seed=23, size=288, with_reference=True
    )
    return images_dir, csv_path


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
