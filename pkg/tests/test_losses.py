"""The loss is the training objective; its scalar form is verified against an
oracle written from the formula, and its gradients against finite differences.
"""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from triqa.errors import DataError, UsageError
from triqa.losses import (
    DEFAULT_MARGIN,
    torch_triplet_margin_loss,
    triplet_distance,
    triplet_margin_loss,
    triplet_margin_loss_grad,
)


def oracle_loss(a, p, n, margin):
    """Independent scalar formula: explicit loops, no numpy vector ops."""
    dap = math.sqrt(sum((ai - pi) ** 2 for ai, pi in zip(a, p)))
    dan = math.sqrt(sum((ai - ni) ** 2 for ai, ni in zip(a, n)))
    return max(dap - dan + margin, 0.0)


def test_analytic_case_degenerate_triplet():
    v = [0.3, -1.2, 4.0]
    assert triplet_margin_loss(v, v, v, margin=1.5) == 1.5


def test_analytic_case_inactive_hinge():
    a = [0.0, 0.0]
    p = [0.0, 0.0]  # d(a,p) = 0
    n = [2.0, 0.0]  # d(a,n) = 2
    assert triplet_margin_loss(a, p, n, margin=1.5) == 0.0


def test_analytic_case_active_hinge():
    a = [0.0]
    p = [1.0]  # d = 1
    n = [2.0]  # d = 2
    assert triplet_margin_loss(a, p, n, margin=1.5) == pytest.approx(0.5, abs=1e-15)


def test_matches_oracle_on_1000_random_triples(rng):
    for _ in range(1000):
        dim = int(rng.integers(1, 16))
        a, p, n = (rng.normal(size=dim) * 3 for _ in range(3))
        margin = float(rng.uniform(0.1, 3.0))
        assert triplet_margin_loss(a, p, n, margin) == pytest.approx(
            oracle_loss(a, p, n, margin), abs=1e-12
        )


def test_loss_bounds(rng):
    for _ in range(200):
        a, p, n = (rng.normal(size=6) for _ in range(3))
        loss = triplet_margin_loss(a, p, n)
        assert 0.0 <= loss <= triplet_distance(a, p) + DEFAULT_MARGIN + 1e-12
        if triplet_distance(a, n) >= triplet_distance(a, p) + DEFAULT_MARGIN:
            assert loss == 0.0


def test_margin_validation():
    with pytest.raises(UsageError):
        triplet_margin_loss([1.0], [1.0], [1.0], margin=0.0)
    with pytest.raises(UsageError):
        torch_triplet_margin_loss(torch.zeros(1, 2), torch.zeros(1, 2), torch.zeros(1, 2), margin=-1.0)


def test_input_validation():
    with pytest.raises(DataError, match="mismatch"):
        triplet_margin_loss([1.0, 2.0], [1.0], [1.0, 2.0])
    with pytest.raises(DataError, match="empty"):
        triplet_margin_loss([], [], [])


def _non_kink_triple(rng, dim=5):
    """Random triple with an active hinge, away from the kink and from
    zero-distance pairs so the loss is differentiable there."""
    while True:
        a = rng.normal(size=dim)
        p = a + rng.normal(size=dim) * 2.0
        n = a + rng.normal(size=dim) * 0.5
        margin = float(rng.uniform(1.0, 2.5))
        dap = triplet_distance(a, p)
        dan = triplet_distance(a, n)
        if dap > 0.2 and dan > 0.2 and (dap - dan + margin) > 0.1:
            return a, p, n, margin


def test_gradients_match_finite_differences(rng):
    h = 1e-6
    checked = 0
    while checked < 100:
        a, p, n, margin = _non_kink_triple(rng)
        ga, gp, gn = triplet_margin_loss_grad(a, p, n, margin)
        for vec, grad in ((a, ga), (p, gp), (n, gn)):
            fd = np.zeros_like(vec)
            for i in range(vec.size):
                hi = vec.copy()
                lo = vec.copy()
                hi[i] += h
                lo[i] -= h
                args_hi = [hi if v is vec else v for v in (a, p, n)]
                args_lo = [lo if v is vec else v for v in (a, p, n)]
                fd[i] = (triplet_margin_loss(*args_hi, margin) - triplet_margin_loss(*args_lo, margin)) / (2 * h)
            denom = max(np.linalg.norm(fd), 1e-12)
            assert np.linalg.norm(grad - fd) / denom < 1e-4
        checked += 1


def test_gradient_zero_when_hinge_inactive():
    a = np.zeros(3)
    p = np.zeros(3)
    n = np.array([10.0, 0.0, 0.0])
    for g in triplet_margin_loss_grad(a, p, n, margin=1.5):
        assert np.all(g == 0.0)


def test_gradient_zero_distance_pair_contributes_nothing():
    # a == p with an active hinge: only the d(a,n) term produces gradient
    a = np.array([0.0, 0.0])
    n = np.array([0.5, 0.0])
    ga, gp, gn = triplet_margin_loss_grad(a, a.copy(), n, margin=1.5)
    assert np.all(gp == 0.0)
    assert np.any(gn != 0.0)


def test_torch_form_agrees_with_numpy(rng):
    batch = 32
    a = rng.normal(size=(batch, 8))
    p = rng.normal(size=(batch, 8))
    n = rng.normal(size=(batch, 8))
    expected = np.mean([triplet_margin_loss(a[i], p[i], n[i], 1.5) for i in range(batch)])
    got = torch_triplet_margin_loss(
        torch.from_numpy(a), torch.from_numpy(p), torch.from_numpy(n), margin=1.5
    )
    assert float(got) == pytest.approx(expected, abs=1e-12)


def test_torch_form_backward_at_kink_is_finite():
    # vector_norm(0) has subgradient 0; the whole graph must not NaN
    a = torch.zeros(2, 4, requires_grad=True)
    loss = torch_triplet_margin_loss(a, torch.zeros(2, 4), torch.ones(2, 4))
    loss.backward()
    assert torch.isfinite(a.grad).all()


@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=8),
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=8),
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=8),
    st.floats(0.01, 10.0),
)
@settings(max_examples=200, deadline=None)
def test_property_loss_nonnegative_and_oracle(a, p, n, margin):
    dim = min(len(a), len(p), len(n))
    a, p, n = a[:dim], p[:dim], n[:dim]
    loss = triplet_margin_loss(a, p, n, margin)
    assert loss >= 0.0
    assert loss == pytest.approx(oracle_loss(a, p, n, margin), abs=1e-9)
