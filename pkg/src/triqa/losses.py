"""Triplet margin loss over embeddings, with analytic gradients.

The loss is max{d(a,p) - d(a,n) + margin, 0} with d the Euclidean distance.
The numpy forms here are the reference semantics; the torch form used inside
the training loop is tested to agree with them exactly. At the hinge kink
(and at zero distances) the subgradient is fixed to 0.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import DataError, UsageError

DEFAULT_MARGIN = 1.5


def _as_vec(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise DataError(f"{name} is empty")
    return v


def triplet_distance(x, y) -> float:
    """Euclidean distance between two embeddings."""
    x = _as_vec(x, "x")
    y = _as_vec(y, "y")
    if x.shape != y.shape:
        raise DataError(f"embedding dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(np.sqrt(np.dot(x - y, x - y)))


def triplet_margin_loss(a, p, n, margin: float = DEFAULT_MARGIN) -> float:
    if margin <= 0:
        raise UsageError(f"margin must be positive, got {margin}")
    return max(triplet_distance(a, p) - triplet_distance(a, n) + margin, 0.0)


def triplet_margin_loss_grad(a, p, n, margin: float = DEFAULT_MARGIN):
    """Gradients of the loss w.r.t. (a, p, n).

    Inactive hinge (loss <= 0, including the kink itself) and zero-distance
    pairs contribute zero gradient.
    """
    a = _as_vec(a, "a")
    p = _as_vec(p, "p")
    n = _as_vec(n, "n")
    loss = triplet_margin_loss(a, p, n, margin)
    ga = np.zeros_like(a)
    gp = np.zeros_like(p)
    gn = np.zeros_like(n)
    if loss > 0.0:
        dap = triplet_distance(a, p)
        dan = triplet_distance(a, n)
        if dap > 0.0:
            unit_ap = (a - p) / dap
            ga += unit_ap
            gp -= unit_ap
        if dan > 0.0:
            unit_an = (a - n) / dan
            ga -= unit_an
            gn += unit_an
    return ga, gp, gn


def torch_triplet_margin_loss(
    a: torch.Tensor, p: torch.Tensor, n: torch.Tensor, margin: float = DEFAULT_MARGIN
) -> torch.Tensor:
    """Batch mean of the same hinge, written out so no epsilon sneaks in.

    torch.linalg.vector_norm has the 0-at-0 subgradient this loss specifies.
    """
    if margin <= 0:
        raise UsageError(f"margin must be positive, got {margin}")
    dap = torch.linalg.vector_norm(a - p, dim=-1)
    dan = torch.linalg.vector_norm(a - n, dim=-1)
    return torch.clamp(dap - dan + margin, min=0.0).mean()
