import math

import numpy as np
import pytest

from triqa.distortions import DistortionSpec, apply_distortion
from triqa.errors import DataError
from triqa.fr import cosine_similarity, evaluate_fr, fit_logistic, score_fr


def oracle_cosine(a, b):
    num = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return num / (na * nb)


def test_cosine_matches_oracle(rng):
    for _ in range(300):
        dim = int(rng.integers(1, 20))
        a = rng.normal(size=dim)
        b = rng.normal(size=dim)
        assert cosine_similarity(a, b) == pytest.approx(oracle_cosine(a, b), abs=1e-12)


def test_cosine_special_cases():
    assert cosine_similarity([1.0, 2.0], [1.0, 2.0]) == 1.0  # exactly
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert cosine_similarity([1.0, 0.0], [-1.0, 0.0]) == -1.0
    assert cosine_similarity([1.0, 1.0], [2.0, 2.0]) == pytest.approx(1.0, abs=1e-15)


def test_cosine_symmetry(rng):
    a = rng.normal(size=8)
    b = rng.normal(size=8)
    assert cosine_similarity(a, b) == cosine_similarity(b, a)


def test_cosine_stays_clamped(rng):
    # parallel vectors with big magnitude gaps can overshoot 1 by rounding
    for _ in range(200):
        a = rng.normal(size=6)
        v = cosine_similarity(a, a * 1e12)
        assert -1.0 <= v <= 1.0


def test_cosine_rejects_zero_vectors_and_mismatch():
    with pytest.raises(DataError, match="zero vector"):
        cosine_similarity([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(DataError, match="undefined"):
        cosine_similarity([0.0, 0.0], [0.0, 0.0])
    with pytest.raises(DataError, match="mismatch"):
        cosine_similarity([1.0], [1.0, 2.0])


def test_score_fr_identical_is_exactly_one(micro_ckpt, pristine):
    assert score_fr(pristine, pristine, micro_ckpt) == 1.0
    assert score_fr(pristine, pristine.copy(), micro_ckpt) == 1.0


def test_score_fr_accepts_paths(micro_ckpt, pristine, tmp_path):
    from triqa.images import save_image

    path = tmp_path / "ref.png"
    save_image(pristine, path)
    assert score_fr(path, path, micro_ckpt) == 1.0


def test_score_fr_symmetric_and_below_one(micro_ckpt, pristine):
    distorted = apply_distortion(pristine, DistortionSpec(distortion_id="gaussian-blur", level=4), 0)
    s = score_fr(pristine, distorted, micro_ckpt)
    assert -1.0 <= s < 1.0
    assert score_fr(distorted, pristine, micro_ckpt) == s


def test_score_fr_shape_mismatch(micro_ckpt, pristine):
    with pytest.raises(DataError, match="mismatch"):
        score_fr(pristine, pristine[:-8], micro_ckpt)


def test_score_fr_orders_severity(micro_ckpt, pristine):
    # even a micro-trained encoder separates extreme blur levels
    light = apply_distortion(pristine, DistortionSpec(distortion_id="gaussian-blur", level=1), 0)
    heavy = apply_distortion(pristine, DistortionSpec(distortion_id="gaussian-blur", level=5), 0)
    assert score_fr(pristine, light, micro_ckpt) > score_fr(pristine, heavy, micro_ckpt)


def test_evaluate_fr_reports_correlations(micro_ckpt, pristine):
    pairs = []
    mos = []
    for lv in (1, 2, 3, 4, 5):
        img = apply_distortion(pristine, DistortionSpec(distortion_id="jpeg", level=lv), 1)
        pairs.append((pristine, img))
        mos.append(100.0 - 18.0 * lv)
    report = evaluate_fr(pairs, mos, micro_ckpt)
    assert report.count == 5
    assert not report.degenerate
    assert -1.0 <= report.srcc <= 1.0
    assert -1.0 <= report.plcc <= 1.0


def test_evaluate_fr_degenerate_constant_mos(micro_ckpt, pristine):
    blurred = apply_distortion(pristine, DistortionSpec(distortion_id="gaussian-blur", level=3), 0)
    report = evaluate_fr([(pristine, pristine), (pristine, blurred)], [50.0, 50.0], micro_ckpt)
    assert report.degenerate
    assert math.isnan(report.srcc) and math.isnan(report.plcc)


def test_evaluate_fr_validations(micro_ckpt, pristine):
    with pytest.raises(DataError, match="mismatch"):
        evaluate_fr([(pristine, pristine)], [1.0, 2.0], micro_ckpt)
    with pytest.raises(DataError, match="at least 2"):
        evaluate_fr([(pristine, pristine)], [1.0], micro_ckpt)
    with pytest.raises(DataError, match="non-finite"):
        evaluate_fr([(pristine, pristine), (pristine, pristine)], [1.0, float("inf")], micro_ckpt)


def test_fit_logistic_recovers_monotone_map(rng):
    from triqa.fr import _logistic4

    scores = rng.uniform(-1, 1, size=40)
    mos = _logistic4(scores, 90.0, 10.0, 0.1, 0.3)  # known 4-parameter link
    params, remapped = fit_logistic(scores, mos)
    assert params is not None
    assert np.allclose(remapped, mos, atol=1e-6)


def test_fit_logistic_degenerate_scores():
    params, remapped = fit_logistic(np.full(10, 0.5), np.arange(10.0))
    assert params is None and remapped is None


def test_evaluate_fr_logistic_improves_plcc(micro_ckpt, pristine, rng):
    pairs = []
    mos = []
    for d in ("gaussian-blur", "jpeg", "white-noise"):
        for lv in (1, 3, 5):
            img = apply_distortion(pristine, DistortionSpec(distortion_id=d, level=lv), 7)
            pairs.append((pristine, img))
            mos.append(95.0 - 17.0 * lv + rng.normal() * 0.5)
    report = evaluate_fr(pairs, mos, micro_ckpt, logistic_fit=True)
    if report.logistic_params is not None:
        assert report.plcc_fitted >= report.plcc - 1e-9
