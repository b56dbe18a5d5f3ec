"""L2-regularized hinge-loss linear SVM with Platt-calibrated probabilities.

The primal problem

    min_w  1/2 ||w||^2 + C * sum_i max(0, 1 - y_i w.x_i)

is solved in the dual by coordinate descent (one dual variable per example,
box-constrained to [0, C]).  The intercept is the weight on an appended
constant feature of value 1, so it is regularized together with w.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from . import kernels
from ._splits import stratified_kfold
from .featurizer import Column, FeatureMatrix

CALIBRATION_FOLDS = 3


class TrainingError(ValueError):
    pass


class NotCalibratedError(RuntimeError):
    pass


@dataclass
class SolverResult:
    w: np.ndarray
    bias: float
    alpha: np.ndarray
    epochs: int
    converged: bool
    max_violation: float
    primal_trace: list[float] = field(default_factory=list)
    dual_trace: list[float] = field(default_factory=list)


def _augment(x) -> sp.csr_matrix:
    x = sp.csr_matrix(x, dtype=np.float64)
    ones = sp.csr_matrix(np.ones((x.shape[0], 1)))
    aug = sp.hstack([x, ones], format="csr")
    aug.sort_indices()
    return aug


def primal_objective(x_aug: sp.csr_matrix, y, w_aug, C: float) -> float:
    margins = y * (x_aug @ w_aug)
    return 0.5 * float(w_aug @ w_aug) + C * float(np.maximum(0.0, 1.0 - margins).sum())


def dual_objective(w_aug, alpha) -> float:
    """Dual objective written as a minimization: 1/2 ||w(alpha)||^2 - sum(alpha)."""
    return 0.5 * float(w_aug @ w_aug) - float(alpha.sum())


def _check_inputs(x, y):
    y = np.asarray(y)
    if set(np.unique(y)) - {-1, 1}:
        raise TrainingError("labels must be -1/+1")
    if len(np.unique(y)) < 2:
        raise TrainingError("training data contains a single class")
    data = x.data if sp.issparse(x) else np.asarray(x)
    if not np.all(np.isfinite(data)):
        raise TrainingError("non-finite feature value")
    return y.astype(np.float64)


def solve_dual_cd(
    x,
    y,
    C: float = 1.0,
    seed: int = 0,
    tol: float = 1e-4,
    max_epochs: int = 1000,
    record: bool = False,
) -> SolverResult:
    """Dual coordinate descent over seeded random permutations of the examples.

    Stops once an epoch's largest projected-gradient violation is below
    ``tol`` or after ``max_epochs``.  With ``record`` the primal and dual
    objectives are stored after every epoch.
    """
    if C <= 0:
        raise TrainingError("C must be positive")
    yf = _check_inputs(x, y)
    xa = _augment(x)
    n, d = xa.shape
    data, indices, indptr = xa.data, xa.indices.astype(np.int64), xa.indptr.astype(np.int64)
    qdiag = np.asarray(xa.multiply(xa).sum(axis=1)).ravel()
    alpha = np.zeros(n)
    w = np.zeros(d)
    rng = np.random.default_rng(seed)
    result = SolverResult(w, 0.0, alpha, 0, False, np.inf)
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(n).astype(np.int64)
        violation = kernels.cd_epoch(data, indices, indptr, yf, qdiag, order, alpha, w, float(C))
        result.epochs = epoch
        result.max_violation = float(violation)
        if record:
            result.primal_trace.append(primal_objective(xa, yf, w, C))
            result.dual_trace.append(dual_objective(w, alpha))
        if violation < tol:
            result.converged = True
            break
    result.w = w[:-1].copy()
    result.bias = float(w[-1])
    return result


def kkt_violations(x, y, result: SolverResult, C: float) -> np.ndarray:
    xa = _augment(x)
    w_aug = np.append(result.w, result.bias)
    return kernels.violations(
        xa.data, xa.indices.astype(np.int64), xa.indptr.astype(np.int64),
        np.asarray(y, dtype=np.float64), result.alpha, w_aug, float(C),
    )


# -- Platt scaling -----------------------------------------------------------

def fit_platt(decision_values, labels, max_iter: int = 100, grad_tol: float = 1e-8) -> tuple[float, float]:
    """Fit P(y=+1|f) = 1 / (1 + exp(a*f + b)) by damped Newton steps.

    Targets are the regularized (N+ + 1)/(N+ + 2) and 1/(N- + 2).  When every
    decision value is equal, a = 0 and b reproduces the mean target.
    """
    f = np.asarray(decision_values, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int(np.sum(y > 0))
    n_neg = int(np.sum(y <= 0))
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("Platt scaling needs both classes")
    t = np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    if np.ptp(f) == 0:
        m = t.mean()
        return 0.0, float(np.log((1.0 - m) / m))

    def nll(a, b):
        z = f * a + b
        # t*z + log(1 + exp(-z)), written to stay finite for large |z|
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-np.abs(z))),
                                     (t - 1.0) * z + np.log1p(np.exp(-np.abs(z))))))

    a, b = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    fval = nll(a, b)
    sigma = 1e-12
    for _ in range(max_iter):
        p = expit(-(f * a + b))
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + np.sum(f * f * d2)
        h22 = sigma + np.sum(d2)
        h21 = np.sum(f * d2)
        g1 = np.sum(f * (t - p))
        g2 = np.sum(t - p)
        if np.hypot(g1, g2) < grad_tol:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nf = nll(na, nb)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            break
    return float(a), float(b)


def platt_probability(margins, platt_a: float, platt_b: float) -> np.ndarray:
    return expit(-(platt_a * np.asarray(margins, dtype=np.float64) + platt_b))


# -- model -------------------------------------------------------------------

@dataclass
class TrainedModel:
    columns: list[Column]
    weights: np.ndarray
    bias: float
    C: float = 1.0
    platt_a: float | None = None
    platt_b: float | None = None
    seed: int = 0
    tol: float = 1e-4
    epochs: int = 0
    converged: bool = True

    @property
    def calibrated(self) -> bool:
        return self.platt_a is not None and self.platt_b is not None

    def to_json(self) -> dict:
        return {
            "columns": [{"name": c.name, "source": c.source, "variable": c.variable} for c in self.columns],
            "weights": [float(v) for v in self.weights],
            "bias": float(self.bias),
            "C": float(self.C),
            "platt_a": self.platt_a,
            "platt_b": self.platt_b,
            "seed": int(self.seed),
            "tol": float(self.tol),
            "epochs": int(self.epochs),
            "converged": bool(self.converged),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainedModel":
        return cls(
            columns=[Column(**c) for c in obj["columns"]],
            weights=np.array(obj["weights"], dtype=np.float64),
            bias=float(obj["bias"]),
            C=float(obj["C"]),
            platt_a=obj.get("platt_a"),
            platt_b=obj.get("platt_b"),
            seed=int(obj.get("seed", 0)),
            tol=float(obj.get("tol", 1e-4)),
            epochs=int(obj.get("epochs", 0)),
            converged=bool(obj.get("converged", True)),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _fit_weights(x, y, C, seed, tol, max_epochs) -> SolverResult:
    return solve_dual_cd(x, y, C=C, seed=seed, tol=tol, max_epochs=max_epochs)


def _margins(x, w, b) -> np.ndarray:
    return np.asarray(x @ w).ravel() + b


def train(
    matrix: FeatureMatrix,
    C: float = 1.0,
    seed: int = 0,
    tol: float = 1e-4,
    max_epochs: int = 1000,
    calibrate: bool = True,
) -> TrainedModel:
    """Fit weights on the whole matrix, then Platt-calibrate on 3-fold cross-fitted margins.

    Classes with fewer than three members cannot be spread across the
    calibration folds; the sigmoid is then fitted on in-sample margins.
    """
    if matrix.labels is None:
        raise TrainingError("training matrix has no labels")
    y = np.asarray(matrix.labels)
    x = matrix.values
    res = _fit_weights(x, y, C, seed, tol, max_epochs)
    model = TrainedModel(list(matrix.columns), res.w, res.bias, C, None, None, seed, tol, res.epochs, res.converged)
    if not calibrate:
        return model
    if min(np.sum(y > 0), np.sum(y < 0)) >= CALIBRATION_FOLDS:
        folds = stratified_kfold(y, CALIBRATION_FOLDS, seed)
        cross = np.empty(len(y))
        for k in range(CALIBRATION_FOLDS):
            held = folds == k
            sub = _fit_weights(x[~held], y[~held], C, seed, tol, max_epochs)
            cross[held] = _margins(x[held], sub.w, sub.bias)
    else:
        cross = _margins(x, res.w, res.bias)
    model.platt_a, model.platt_b = fit_platt(cross, y)
    return model


def _row_values(model: TrainedModel, row):
    if isinstance(row, FeatureMatrix):
        if row.column_names != [c.name for c in model.columns]:
            raise ValueError("feature columns differ from the model's training columns")
        return row.values
    x = row if sp.issparse(row) else np.asarray(row, dtype=np.float64)
    width = x.shape[-1]
    if width != len(model.weights):
        raise ValueError(f"row width {width} != model width {len(model.weights)}")
    return x


def decision(model: TrainedModel, row):
    """``w.x + b`` for one row (scalar) or every row of a matrix (array)."""
    x = _row_values(model, row)
    out = x @ model.weights
    if np.ndim(out) == 0:
        return float(out) + model.bias
    return np.asarray(out).ravel() + model.bias


def predict_proba(model: TrainedModel, row):
    if not model.calibrated:
        raise NotCalibratedError("model has no Platt parameters")
    p = platt_probability(decision(model, row), model.platt_a, model.platt_b)
    return float(p) if np.ndim(p) == 0 else p


def rank_coefficients(model: TrainedModel, top_k: int | None = None) -> list[tuple[str, str, float]]:
    ranked = sorted(
        ((c.name, c.source, float(w)) for c, w in zip(model.columns, model.weights)),
        key=lambda t: (-t[2], t[0]),
    )
    return ranked if top_k is None else ranked[:top_k]
