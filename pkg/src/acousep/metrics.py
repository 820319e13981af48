"""Separation and classification quality measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

SIR_CAP_DB = 300.0
ERROR_ENERGY_FLOOR = 1e-30

DRONE = 1
NON_DRONE = -1


@dataclass(frozen=True, eq=False)
class AlignmentMap:
    """Pairing of estimated rows to true rows.

    ``permutation[i]`` is the estimate row matched to truth row ``i``;
    ``signs[i]`` and ``scales[i]`` map that estimate onto truth row ``i``
    (``scales`` already includes the sign). ``correlations[i]`` is the
    absolute Pearson correlation of the pair.
    """

    permutation: np.ndarray
    signs: np.ndarray
    scales: np.ndarray
    correlations: np.ndarray

    def apply(self, estimated: np.ndarray) -> np.ndarray:
        """Reorder and rescale estimate rows to line up with the truth."""
        estimated = np.asarray(estimated, dtype=np.float64)
        return estimated[self.permutation] * self.scales[:, None]

    def truth_index(self) -> np.ndarray:
        """Inverse map: the truth row assigned to each estimate row."""
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(self.permutation.size)
        return inv


def _corr_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (a @ b.T) / np.outer(na, nb)
    return np.nan_to_num(c)


def align(estimated: np.ndarray, truth: np.ndarray) -> AlignmentMap:
    """Greedy max-|correlation| matching of estimate rows to truth rows."""
    estimated = np.atleast_2d(np.asarray(estimated, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if estimated.shape != truth.shape:
        raise ParameterError(f"shape mismatch: estimated {estimated.shape} vs truth {truth.shape}")
    corr = _corr_matrix(estimated, truth)  # rows: estimates, cols: truths
    n = corr.shape[0]
    work = np.abs(corr)
    perm = np.full(n, -1)
    for _ in range(n):
        # argmax scans row-major, so ties go to the lowest (estimate, truth) pair
        e, t = np.unravel_index(np.argmax(work), work.shape)
        perm[t] = e
        work[e, :] = -1.0
        work[:, t] = -1.0
    signs = np.where(corr[perm, np.arange(n)] < 0, -1.0, 1.0)
    scales = np.empty(n)
    for t in range(n):
        y = estimated[perm[t]]
        energy = y @ y
        scales[t] = (truth[t] @ y) / energy if energy > 0 else 0.0
    return AlignmentMap(perm, signs, scales, np.abs(corr[perm, np.arange(n)]))


def sir_db(aligned_estimate, truth) -> float:
    """Energy ratio of ``truth`` to ``truth - aligned_estimate`` in dB, capped at 300."""
    y = np.asarray(aligned_estimate, dtype=np.float64)
    s = np.asarray(truth, dtype=np.float64)
    if y.shape != s.shape:
        raise ParameterError(f"length mismatch: {y.shape} vs {s.shape}")
    signal_energy = float(s @ s)
    if signal_energy == 0.0:
        raise ParameterError("truth signal is all zero")
    err = s - y
    error_energy = float(err @ err)
    if error_energy < ERROR_ENERGY_FLOOR:
        return SIR_CAP_DB
    return min(SIR_CAP_DB, 10.0 * np.log10(signal_energy / error_energy))


def aligned_sirs(estimated: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, AlignmentMap]:
    """Align ``estimated`` to ``truth`` and return the per-source SIR in dB.

    Both sides are mean-removed first: unmixing cannot recover a source's
    DC offset, so it would otherwise count as interference.
    """
    estimated = np.atleast_2d(np.asarray(estimated, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    estimated = estimated - estimated.mean(axis=1, keepdims=True)
    truth = truth - truth.mean(axis=1, keepdims=True)
    amap = align(estimated, truth)
    matched = amap.apply(estimated)
    return np.array([sir_db(matched[i], truth[i]) for i in range(truth.shape[0])]), amap


@dataclass(frozen=True)
class AccuracyResult:
    percent: float
    true_positive: int
    false_positive: int
    true_negative: int
    false_negative: int

    @property
    def total(self) -> int:
        return self.true_positive + self.false_positive + self.true_negative + self.false_negative

    def to_dict(self) -> dict:
        return {
            "accuracy": self.percent,
            "tp": self.true_positive,
            "fp": self.false_positive,
            "tn": self.true_negative,
            "fn": self.false_negative,
        }


def accuracy(predictions, labels) -> AccuracyResult:
    """Percent of matching drone (+1) / non-drone (-1) decisions with confusion counts."""
    p = np.asarray(predictions)
    t = np.asarray(labels)
    if p.shape != t.shape or p.ndim != 1:
        raise ParameterError("predictions and labels must be 1-D and of equal length")
    if p.size == 0:
        raise ParameterError("cannot score an empty prediction set")
    pos_p, pos_t = p == DRONE, t == DRONE
    tp = int(np.sum(pos_p & pos_t))
    fp = int(np.sum(pos_p & ~pos_t))
    tn = int(np.sum(~pos_p & ~pos_t))
    fn = int(np.sum(~pos_p & pos_t))
    return AccuracyResult(100.0 * (tp + tn) / p.size, tp, fp, tn, fn)
