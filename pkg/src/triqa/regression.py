"""Linear SVR head over fused features, with the split-and-median protocol.

fit() standardizes features, grid-searches (C, epsilon) by 5-fold
cross-validated mean absolute error on the training rows only, and returns a
flat linear model (weights, bias, standardization stats), so prediction is
plain arithmetic with no estimator objects left inside. run_protocol() draws
fresh 80/20 splits per iteration and reports per-iteration and median
SRCC/PLCC, the evaluation the quality tables use.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import GridSearchCV, KFold
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import LinearSVR

from .errors import DataError, UsageError
from .metrics import plcc, srcc
from .seeds import STREAM_SPLITS, derive, make_rng

DEFAULT_GRID = {"C": (0.01, 0.1, 1.0, 10.0, 100.0), "epsilon": (0.1, 0.5, 1.0)}

MODEL_FORMAT = "triqa-regression-model"
MODEL_VERSION = 1


def _as_matrix(features) -> np.ndarray:
    if hasattr(features, "values") and hasattr(features, "provenance"):
        features = features.values
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DataError(f"features must be a vector or matrix, got shape {x.shape}")
    return x


@dataclass
class RegressionModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    hyperparameters: dict
    feature_fingerprint: str | None = None

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])


def fit(features, mos, grid: dict | None = None, *, folds: int = 5, seed: int = 0) -> RegressionModel:
    """Grid-searched linear epsilon-insensitive fit on standardized features.

    Hyperparameter selection sees only `features`/`mos` (the caller's
    training split); cross-validation folds are drawn inside them.
    """
    x = _as_matrix(features)
    y = np.asarray(mos, dtype=np.float64).ravel()
    if x.shape[0] != y.shape[0]:
        raise DataError(f"features/mos length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DataError("non-finite values in regression inputs")
    if np.all(y == y[0]):
        raise DataError("constant MOS: regression target is degenerate")
    if x.shape[0] < folds:
        raise DataError(f"{x.shape[0]} samples is fewer than {folds} cross-validation folds")

    grid = dict(grid or DEFAULT_GRID)
    unknown = set(grid) - {"C", "epsilon"}
    if unknown:
        raise UsageError(f"unknown grid keys: {sorted(unknown)}")
    param_grid = {
        "svr__C": list(grid.get("C", DEFAULT_GRID["C"])),
        "svr__epsilon": list(grid.get("epsilon", DEFAULT_GRID["epsilon"])),
    }

    pipeline = Pipeline(
        [
            ("scaler", StandardScaler()),
            ("svr", LinearSVR(loss="epsilon_insensitive", tol=1e-10, max_iter=200_000, random_state=0)),
        ]
    )
    search = GridSearchCV(
        pipeline,
        param_grid=param_grid,
        scoring="neg_mean_absolute_error",
        cv=KFold(n_splits=folds, shuffle=True, random_state=int(seed) % (2**32)),
        refit=False,
        n_jobs=None,
    )
    with warnings.catch_warnings():
        # tol above is intentionally much tighter than the default; on the
        # hardest grid cells liblinear stops at max_iter instead, which is
        # still far past useful precision for MOS regression
        warnings.simplefilter("ignore", ConvergenceWarning)
        search.fit(x, y)
        # CV scores within 1e-6 of each other are solver noise, not signal;
        # treat them as tied and keep the earliest grid cell (smallest C,
        # then smallest epsilon), i.e. the most regularized of the tied models.
        mean_scores = np.round(np.asarray(search.cv_results_["mean_test_score"]) / 1e-6) * 1e-6
        best_params = search.cv_results_["params"][int(np.argmax(mean_scores))]
        best = pipeline.set_params(**best_params)
        best.fit(x, y)
    scaler = best.named_steps["scaler"]
    svr = best.named_steps["svr"]
    return RegressionModel(
        weights=np.asarray(svr.coef_, dtype=np.float64).ravel(),
        bias=float(np.asarray(svr.intercept_).ravel()[0]),
        mean=np.asarray(scaler.mean_, dtype=np.float64),
        scale=np.asarray(scaler.scale_, dtype=np.float64),
        hyperparameters={"C": float(best_params["svr__C"]), "epsilon": float(best_params["svr__epsilon"])},
    )


def predict(model: RegressionModel, features):
    """MOS estimate(s). A single vector gives a float, a matrix an array.

    Rows are evaluated one at a time so batch and one-by-one prediction take
    the identical arithmetic path.
    """
    single = not (isinstance(features, np.ndarray) and features.ndim == 2)
    x = _as_matrix(features)
    if x.shape[1] != model.dim:
        raise DataError(f"feature dim {x.shape[1]} does not match model dim {model.dim}")
    out = np.empty(x.shape[0], dtype=np.float64)
    for i in range(x.shape[0]):
        out[i] = np.dot((x[i] - model.mean) / model.scale, model.weights) + model.bias
    return float(out[0]) if single and out.shape[0] == 1 else out


@dataclass
class SplitProtocol:
    """Random train/test holdouts, medians over iterations."""

    train_fraction: float = 0.8
    iterations: int = 10
    seed: int = 0
    large_dataset: bool = False  # forces a single iteration

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise UsageError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.iterations < 1:
            raise UsageError(f"iterations must be >= 1, got {self.iterations}")

    @property
    def effective_iterations(self) -> int:
        return 1 if self.large_dataset else self.iterations


@dataclass
class IterationResult:
    index: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    srcc: float
    plcc: float
    hyperparameters: dict
    predictions: np.ndarray
    mos_test: np.ndarray


@dataclass
class ProtocolResult:
    iterations: list[IterationResult] = field(default_factory=list)

    def _values(self, name):
        return np.array([getattr(it, name) for it in self.iterations])

    @property
    def median_srcc(self) -> float:
        return float(np.median(self._values("srcc")))

    @property
    def median_plcc(self) -> float:
        return float(np.median(self._values("plcc")))

    @property
    def std_srcc(self) -> float:
        vals = self._values("srcc")
        return float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0

    @property
    def std_plcc(self) -> float:
        vals = self._values("plcc")
        return float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0


def run_protocol(
    features,
    mos,
    protocol: SplitProtocol,
    *,
    grid: dict | None = None,
    folds: int = 5,
    fit_fn=None,
    inspector=None,
) -> ProtocolResult:
    """Fresh split, fit on train, score on test, per iteration.

    `fit_fn` substitutes the fitting routine (same signature as fit); tests
    use it to instrument exactly which rows the fit ever observes.
    `inspector(iteration, train_indices, test_indices)` is called before each
    fit for the same purpose.
    """
    x = _as_matrix(features)
    y = np.asarray(mos, dtype=np.float64).ravel()
    if x.shape[0] != y.shape[0]:
        raise DataError(f"features/mos length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 10:
        raise DataError(f"protocol needs at least 10 samples, got {x.shape[0]}")
    fit_fn = fit_fn or fit

    n = x.shape[0]
    n_train = int(round(protocol.train_fraction * n))
    n_train = min(max(n_train, 1), n - 1)
    result = ProtocolResult()
    for it in range(protocol.effective_iterations):
        perm = make_rng(derive(protocol.seed, STREAM_SPLITS, it)).permutation(n)
        train_idx = np.sort(perm[:n_train])
        test_idx = np.sort(perm[n_train:])
        if inspector is not None:
            inspector(it, train_idx.copy(), test_idx.copy())
        model = fit_fn(x[train_idx], y[train_idx], grid=grid, folds=folds, seed=derive(protocol.seed, "fit", it))
        preds = predict(model, x[test_idx])
        result.iterations.append(
            IterationResult(
                index=it,
                train_indices=train_idx,
                test_indices=test_idx,
                srcc=srcc(y[test_idx], preds),
                plcc=plcc(y[test_idx], preds),
                hyperparameters=dict(model.hyperparameters),
                predictions=np.asarray(preds, dtype=np.float64),
                mos_test=y[test_idx].copy(),
            )
        )
    return result


# -- model files: .npz arrays + .json sidecar --------------------------------


def save_model(model: RegressionModel, path: str | os.PathLike, *, meta: dict | None = None) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        weights=model.weights,
        mean=model.mean,
        scale=model.scale,
        bias=np.array([model.bias], dtype=np.float64),
    )
    sidecar = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dim": model.dim,
        "hyperparameters": model.hyperparameters,
        "feature_fingerprint": model.feature_fingerprint,
        "meta": meta or {},
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    return path


def load_model(path: str | os.PathLike) -> RegressionModel:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    if not path.is_file():
        raise DataError(f"regression model not found: {path}")
    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.is_file():
        raise DataError(f"regression model sidecar not found: {sidecar_path}")
    meta = json.loads(sidecar_path.read_text())
    if meta.get("format") != MODEL_FORMAT:
        raise DataError(f"not a triqa regression model sidecar: {sidecar_path}")
    with np.load(path) as arrays:
        return RegressionModel(
            weights=arrays["weights"],
            bias=float(arrays["bias"][0]),
            mean=arrays["mean"],
            scale=arrays["scale"],
            hyperparameters=meta.get("hyperparameters", {}),
            feature_fingerprint=meta.get("feature_fingerprint"),
        )
