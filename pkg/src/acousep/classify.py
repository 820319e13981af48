"""Binary drone / non-drone classifiers written from scratch.

* :func:`svm_train` solves the soft-margin linear SVM dual with SMO-style
  pairwise updates (maximal-violating-pair working set selection).
* :func:`knn_train` stores the training set with the inverse of its sample
  covariance; :func:`knn_predict` votes among the k nearest training vectors
  under the Mahalanobis distance.

Labels are +1 for drone and -1 for non-drone throughout.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegeneracyError, ParameterError, TrainingError
from .features import FeatureVector, Method
from .metrics import DRONE, NON_DRONE

log = logging.getLogger(__name__)

KKT_TOLERANCE = 1e-4
_TAU = 1e-12


def _as_xy(features, labels=None) -> tuple[np.ndarray, np.ndarray | None, Method | None]:
    """Accept either FeatureVectors or a plain (n, p) array plus labels."""
    method = None
    if len(features) and isinstance(features[0], FeatureVector):
        x = np.vstack([f.values for f in features])
        method = features[0].method
        if labels is None:
            labels = [f.label for f in features]
    else:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = None
    if labels is not None:
        if any(lab not in (DRONE, NON_DRONE) for lab in labels):
            raise TrainingError("training labels must be +1 (drone) or -1 (non-drone)")
        y = np.asarray(labels, dtype=np.float64)
        if y.shape[0] != x.shape[0]:
            raise ParameterError(f"{x.shape[0]} feature vectors but {y.shape[0]} labels")
    return x, y, method


def _query(v, dimension: int) -> np.ndarray:
    values = v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=np.float64)
    if values.shape != (dimension,):
        raise ParameterError(f"expected a {dimension}-dimensional feature vector, got shape {values.shape}")
    return values


# --------------------------------------------------------------------------
# SVM
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SVMModel:
    """Linear SVM: ``decision(v) = z . ((v - mean) / std) + b``."""

    z: np.ndarray
    b: float
    c: float
    support_indices: np.ndarray
    scaler_mean: np.ndarray
    scaler_std: np.ndarray
    iterations: int = 0
    method: Method | None = None

    @property
    def dimension(self) -> int:
        return self.z.size

    def decision(self, v) -> float:
        x = (_query(v, self.dimension) - self.scaler_mean) / self.scaler_std
        return float(self.z @ x + self.b)

    def raw_hyperplane(self) -> tuple[np.ndarray, float]:
        """(z, b) expressed on unscaled features."""
        z = self.z / self.scaler_std
        return z, float(self.b - z @ self.scaler_mean)

    def to_dict(self) -> dict:
        return {
            "kind": "svm",
            "method": self.method.value if self.method else None,
            "z": self.z.tolist(),
            "b": self.b,
            "c": self.c,
            "support_indices": self.support_indices.tolist(),
            "scaler_mean": self.scaler_mean.tolist(),
            "scaler_std": self.scaler_std.tolist(),
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SVMModel":
        return cls(
            z=np.asarray(d["z"], dtype=np.float64),
            b=float(d["b"]),
            c=float(d["c"]),
            support_indices=np.asarray(d["support_indices"], dtype=int),
            scaler_mean=np.asarray(d["scaler_mean"], dtype=np.float64),
            scaler_std=np.asarray(d["scaler_std"], dtype=np.float64),
            iterations=int(d.get("iterations", 0)),
            method=Method(d["method"]) if d.get("method") else None,
        )


def _smo(k: np.ndarray, y: np.ndarray, c: float, tol: float, max_iter: int) -> tuple[np.ndarray, float, int]:
    """Solve ``min 1/2 a'Qa - sum(a)`` s.t. ``0 <= a <= c, y'a = 0``.

    Returns ``(alpha, b, iterations)``.
    """
    n = y.size
    q = (y[:, None] * y[None, :]) * k
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    while it < max_iter:
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < c)) | ((y > 0) & (alpha > 0))
        score = -y * grad
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        j = int(np.flatnonzero(low)[np.argmin(score[low])])
        if score[i] - score[j] < tol:
            break
        it += 1
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(q[i, i] + q[j, j] + 2.0 * q[i, j], _TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > c:
                    ni, nj = c, c - diff
            elif nj > c:
                nj, ni = c, c + diff
        else:
            quad = max(q[i, i] + q[j, j] - 2.0 * q[i, j], _TAU)
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > c:
                if ni > c:
                    ni, nj = c, total - c
            elif nj < 0:
                nj, ni = 0.0, total
            if total > c:
                if nj > c:
                    nj, ni = c, total - c
            elif ni < 0:
                ni, nj = 0.0, total
        grad += q[:, i] * (ni - ai) + q[:, j] * (nj - aj)
        alpha[i], alpha[j] = ni, nj
    else:
        log.warning("SMO stopped after %d iterations without reaching KKT tolerance %g", max_iter, tol)

    yg = y * grad
    at_upper = alpha >= c
    at_lower = alpha <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        rho = float(yg[free].mean())
    else:
        ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2.0)
    return alpha, 0.0 - rho, it


def svm_train(
    features: Sequence[FeatureVector] | np.ndarray,
    labels: Sequence[int] | None = None,
    c: float = 1.0,
    *,
    standardize: bool = True,
    tol: float = KKT_TOLERANCE,
    max_iter: int = 100_000,
) -> SVMModel:
    """Fit a soft-margin linear SVM.

    With ``standardize`` (the default) features are scaled to zero mean and
    unit variance using training statistics, and a constant feature
    dimension is rejected.
    """
    x, y, method = _as_xy(features, labels)
    if y is None:
        raise TrainingError("training requires labels")
    if not c > 0:
        raise ParameterError(f"regularization constant must be > 0, got {c}")
    n_pos, n_neg = int(np.sum(y > 0)), int(np.sum(y < 0))
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("training set contains a single class")
    if n_pos < 2 or n_neg < 2:
        raise TrainingError(f"need at least 2 examples per class, got {n_pos} drone / {n_neg} non-drone")

    if standardize:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        flat = np.flatnonzero(std <= 1e-12 * np.maximum(1.0, np.abs(mean)))
        if flat.size:
            raise TrainingError(f"feature dimension {int(flat[0])} is constant across the training set")
    else:
        mean = np.zeros(x.shape[1])
        std = np.ones(x.shape[1])
    xs = (x - mean) / std

    alpha, b, iterations = _smo(xs @ xs.T, y, float(c), tol, max_iter)
    z = (alpha * y) @ xs + 0.0
    support = np.flatnonzero(alpha > 0)
    return SVMModel(z, b, float(c), support, mean, std, iterations, method)


def svm_predict(model: SVMModel, v) -> tuple[int, float]:
    """Return ``(label, margin)``; a decision value of exactly 0 maps to non-drone."""
    margin = model.decision(v)
    norm = float(np.linalg.norm(model.z))
    score = margin / norm if norm > 0 else margin
    return (DRONE if score > 0 else NON_DRONE), margin


# --------------------------------------------------------------------------
# KNN with Mahalanobis distance
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KNNModel:
    vectors: np.ndarray
    labels: np.ndarray
    inv_cov: np.ndarray
    k: int
    ridge: float = 0.0
    method: Method | None = field(default=None)

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def distances(self, v) -> np.ndarray:
        """Squared Mahalanobis distance from ``v`` to every training vector."""
        diff = self.vectors - _query(v, self.dimension)
        return np.einsum("ij,jk,ik->i", diff, self.inv_cov, diff)

    def to_dict(self) -> dict:
        return {
            "kind": "knn",
            "method": self.method.value if self.method else None,
            "k": self.k,
            "ridge": self.ridge,
            "inv_cov": self.inv_cov.tolist(),
            "vectors": self.vectors.tolist(),
            "labels": self.labels.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KNNModel":
        return cls(
            vectors=np.asarray(d["vectors"], dtype=np.float64),
            labels=np.asarray(d["labels"], dtype=int),
            inv_cov=np.asarray(d["inv_cov"], dtype=np.float64),
            k=int(d["k"]),
            ridge=float(d.get("ridge", 0.0)),
            method=Method(d["method"]) if d.get("method") else None,
        )


def mahalanobis(a, b, inv_cov) -> float:
    """``(a - b)^T C^-1 (a - b)``."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(d @ inv_cov @ d)


def knn_train(
    features: Sequence[FeatureVector] | np.ndarray,
    labels: Sequence[int] | None = None,
    k: int = 5,
) -> KNNModel:
    x, y, method = _as_xy(features, labels)
    if y is None:
        raise TrainingError("training requires labels")
    n, p = x.shape
    if int(k) != k or k < 1 or k % 2 == 0:
        raise ParameterError(f"k must be a positive odd integer, got {k}")
    if k > n:
        raise ParameterError(f"k={k} exceeds the {n} training vectors")
    if n < 2:
        raise DegeneracyError("need at least 2 training vectors to estimate a covariance")

    cov = np.atleast_2d(np.cov(x, rowvar=False))
    evals = np.linalg.eigvalsh(cov)
    ridge = 0.0
    if evals[0] < 1e-8 * evals[-1] or evals[-1] <= 0:
        ridge = 1e-6 * float(np.trace(cov)) / p
        cov = cov + ridge * np.eye(p)
        evals = np.linalg.eigvalsh(cov)
        if not evals[0] > 0 or evals[0] < 1e-12 * evals[-1]:
            raise DegeneracyError(f"covariance of {n} training vectors in {p} dimensions is singular even after ridge")
    inv = np.linalg.inv(cov)
    inv = 0.5 * (inv + inv.T)
    return KNNModel(x.copy(), y.astype(int), inv, int(k), ridge, method)


def knn_predict(model: KNNModel, v) -> int:
    """Majority label among the k nearest training vectors.

    Equal distances are ordered by training index.
    """
    d = model.distances(v)
    nearest = np.argsort(d, kind="stable")[:model.k]
    votes = int(np.sum(model.labels[nearest]))
    return DRONE if votes > 0 else NON_DRONE


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def save_model(model: SVMModel | KNNModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path: str | Path) -> SVMModel | KNNModel:
    d = json.loads(Path(path).read_text())
    kind = d.get("kind")
    if kind == "svm":
        return SVMModel.from_dict(d)
    if kind == "knn":
        return KNNModel.from_dict(d)
    raise ParameterError(f"unknown model kind {kind!r} in {path}")


def predict(model: SVMModel | KNNModel, v) -> int:
    if isinstance(model, SVMModel):
        return svm_predict(model, v)[0]
    return knn_predict(model, v)
