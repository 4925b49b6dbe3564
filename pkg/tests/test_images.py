import math

import numpy as np
import pytest

from triqa.errors import DataError
from triqa.images import (
    ImageStore,
    ensure_image,
    from_float,
    list_corpus,
    load_image,
    psnr,
    save_image,
    to_float,
)


def test_ensure_image_accepts_contract(pristine):
    assert ensure_image(pristine) is pristine


@pytest.mark.parametrize(
    "bad",
    [
        np.zeros((10, 10), dtype=np.uint8),
        np.zeros((10, 10, 4), dtype=np.uint8),
        np.zeros((10, 10, 3), dtype=np.float32),
        [[1, 2, 3]],
    ],
)
def test_ensure_image_rejects(bad):
    with pytest.raises(DataError):
        ensure_image(bad)


def test_from_float_clips_and_rounds():
    arr = np.array([[[-3.2, 0.4, 0.6]], [[254.5, 255.5, 300.0]]])
    out = from_float(arr)
    assert out.dtype == np.uint8
    # np.rint rounds half to even: 254.5 -> 254, 255.5 -> 256 (clipped)
    assert out.tolist() == [[[0, 0, 1]], [[254, 255, 255]]]


def test_to_float_copies(pristine):
    f = to_float(pristine)
    assert f.dtype == np.float64
    f[0, 0, 0] = -1
    assert pristine[0, 0, 0] != 255  # uint8 never holds -1; original untouched
    assert from_float(to_float(pristine)).tolist() == pristine.tolist()


def test_png_round_trip_exact(pristine, tmp_path):
    path = tmp_path / "a" / "img.png"
    save_image(pristine, path)
    assert np.array_equal(load_image(path), pristine)


def test_load_image_missing(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_image(tmp_path / "nope.png")


def test_loaded_image_is_writable(pristine, tmp_path):
    save_image(pristine, tmp_path / "w.png")
    img = load_image(tmp_path / "w.png")
    img[0, 0, 0] = 1  # torch training requires writable buffers


def test_list_corpus_sorted_pairs(corpus_dir):
    pairs = list_corpus(corpus_dir)
    assert len(pairs) == 2
    assert pairs == sorted(pairs)
    for image_id, path in pairs:
        assert path.stem == image_id


def test_list_corpus_rejects_empty_and_missing(tmp_path):
    with pytest.raises(DataError, match="not found"):
        list_corpus(tmp_path / "missing")
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(DataError, match="no image files"):
        list_corpus(empty)


def test_list_corpus_rejects_duplicate_stems(tmp_path, pristine):
    save_image(pristine, tmp_path / "a.png")
    save_image(pristine, tmp_path / "a.jpg")
    with pytest.raises(DataError, match="duplicate"):
        list_corpus(tmp_path)


def test_image_store_dict_and_dir(corpus_dir, pristine):
    dir_store = ImageStore(corpus_dir)
    ids = dir_store.ids()
    assert len(ids) == 2
    first = dir_store.get(ids[0])
    assert first is dir_store.get(ids[0])  # cached, same object

    mem_store = ImageStore({"x": pristine})
    assert "x" in mem_store
    assert mem_store.get("x") is pristine
    with pytest.raises(DataError, match="not in corpus"):
        mem_store.get("y")


def test_image_store_rejects_bad_member():
    with pytest.raises(DataError):
        ImageStore({"x": np.zeros((4, 4), dtype=np.uint8)})


def test_psnr_identical_is_inf(pristine):
    assert psnr(pristine, pristine) == math.inf


def test_psnr_known_value():
    a = np.zeros((8, 8, 3), dtype=np.uint8)
    b = np.ones((8, 8, 3), dtype=np.uint8)
    # MSE = 1 -> 10*log10(255^2)
    assert psnr(a, b) == pytest.approx(10 * math.log10(255.0**2), abs=1e-12)


def test_psnr_matches_direct_formula(rng):
    a = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    b = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    assert psnr(a, b) == pytest.approx(10 * math.log10(255.0**2 / mse), abs=1e-12)


def test_psnr_shape_mismatch():
    a = np.zeros((8, 8, 3), dtype=np.uint8)
    b = np.zeros((9, 8, 3), dtype=np.uint8)
    with pytest.raises(DataError, match="mismatch"):
        psnr(a, b)
