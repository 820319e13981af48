"""FastICA with symmetric decorrelation.

Pipeline: center the block, whiten it with the eigendecomposition of its
sample covariance, then iterate the fixed-point update

    w <- E[z g(w.z)] - E[g'(w.z)] w

on all rows at once, re-orthonormalizing with ``W <- (W W^T)^(-1/2) W``
after every sweep. Expectations are sample means over the block columns.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, ParameterError
from .mixing import MixedBlock

MIN_EIGEN_RATIO = 1e-12


class Contrast(str, enum.Enum):
    TANH = "tanh"
    GAUSS = "gauss"
    CUBIC = "cubic"


def contrast_eval(contrast: Contrast | str, u):
    """Return ``(g(u), g'(u))`` for the chosen nonlinearity (elementwise)."""
    contrast = Contrast(contrast)
    u = np.asarray(u)
    if u.dtype.kind != "f":
        u = u.astype(np.float64)
    if contrast is Contrast.TANH:
        g = np.tanh(u)
        return g, 1.0 - g * g
    if contrast is Contrast.GAUSS:
        e = np.exp(-0.5 * u * u)
        return u * e, (1.0 - u * u) * e
    return u ** 3, 3.0 * u * u


@dataclass(frozen=True)
class FastICAConfig:
    contrast: Contrast = Contrast.TANH
    max_iterations: int = 200
    tolerance: float = 1e-6
    seed: int = 0
    refine_sweeps: int = 2

    def __post_init__(self):
        object.__setattr__(self, "contrast", Contrast(self.contrast))
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ParameterError("max_iterations must be an integer >= 1")
        if not self.tolerance > 0:
            raise ParameterError("tolerance must be > 0")
        if self.refine_sweeps < 0:
            raise ParameterError("refine_sweeps must be >= 0")


@dataclass(frozen=True, eq=False)
class Whitener:
    """Centering and whitening record: ``z = transform @ (x - mean)``."""

    mean: np.ndarray
    transform: np.ndarray
    eigenvalues: np.ndarray


@dataclass(frozen=True, eq=False)
class SeparationResult:
    """Output of :func:`separate`.

    ``rotation`` is the orthonormal unmixing matrix acting on whitened data;
    ``unmixing`` composes it with the whitening transform, so that
    ``y == unmixing @ (x - whitener.mean[:, None])``.
    """

    unmixing: np.ndarray
    rotation: np.ndarray
    y: np.ndarray
    whitener: Whitener
    iterations_used: int
    converged: bool
    history: tuple[float, ...] = ()

    @property
    def w(self) -> np.ndarray:
        return self.unmixing

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Unmix raw microphone data with the stored centering and W."""
        return self.unmixing @ (np.asarray(x, dtype=np.float64) - self.whitener.mean[:, None])


def center(x) -> tuple[np.ndarray, np.ndarray]:
    """Subtract each row's sample mean; returns ``(centered, means)``."""
    if isinstance(x, MixedBlock):
        x = x.x
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=1)
    centered = x - mean[:, None]
    # Second pass removes the rounding residue left by the first.
    residue = centered.mean(axis=1)
    return centered - residue[:, None], mean + residue


def whiten(centered: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Whiten zero-mean rows; returns ``(z, transform, eigenvalues)``.

    ``transform = diag(eigenvalues)^(-1/2) @ E^T`` where ``E diag E^T`` is the
    sample covariance.
    """
    centered = np.asarray(centered, dtype=np.float64)
    cov = centered @ centered.T / centered.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    largest = evals[-1]
    if not largest > 0 or evals[0] <= MIN_EIGEN_RATIO * largest:
        ratio = evals[0] / largest if largest > 0 else 0.0
        raise DegeneracyError(
            f"covariance is rank-deficient: smallest/largest eigenvalue ratio {ratio:.3e} "
            f"<= {MIN_EIGEN_RATIO:g} (duplicate or collinear microphones?)"
        )
    transform = evecs.T / np.sqrt(evals)[:, None]
    return transform @ centered, transform, evals


def symmetric_decorrelation(w: np.ndarray, max_steps: int = 100) -> np.ndarray:
    """Return ``(W W^T)^(-1/2) W``, the nearest matrix with orthonormal rows.

    Computed by the Newton-Schulz polar iteration ``X <- 1.5 X - 0.5 X X^T X``
    started from ``W / ||W||_2``. Near a fixed point (W close to a scaled
    signed permutation) the iteration leaves W's structure intact to the last
    ulp, whereas an eigendecomposition of the nearly scalar ``W W^T`` would
    pick an arbitrary eigenbasis and smear rounding error across all entries.
    """
    w = np.asarray(w)
    norm = np.linalg.norm(w.astype(np.float64), 2)
    if not norm > 0:
        raise DegeneracyError("cannot decorrelate an all-zero unmixing matrix")
    x = w / norm
    eye = np.eye(w.shape[0], dtype=w.dtype)
    prev = np.inf
    for _ in range(max_steps):
        xxt = x @ x.T
        dev = np.linalg.norm(xxt - eye)
        if dev < 1e-15 or (dev < 1e-12 and dev >= prev):
            break
        prev = dev
        x = 1.5 * x - 0.5 * xxt @ x
    else:
        # rank-deficient input: fall back to the closed form
        w = w.astype(np.float64)
        s, u = np.linalg.eigh(w @ w.T)
        if s[0] <= 0:
            raise DegeneracyError("unmixing matrix lost rank during iteration")
        return (u / np.sqrt(s)) @ u.T @ w
    return x


def _sweep(w: np.ndarray, z: np.ndarray, contrast: Contrast) -> np.ndarray:
    g, g_prime = contrast_eval(contrast, w @ z)
    w_new = g @ z.T / z.shape[1] - g_prime.mean(axis=1)[:, None] * w
    return symmetric_decorrelation(w_new)


def separate(block: MixedBlock | np.ndarray, config: FastICAConfig | None = None) -> SeparationResult:
    """Estimate independent sources from a mixed block.

    Non-convergence is reported through ``converged=False`` rather than an
    exception; whitening degeneracy raises :class:`DegeneracyError`.
    """
    config = config or FastICAConfig()
    x = block.x if isinstance(block, MixedBlock) else np.asarray(block, dtype=np.float64)
    j, n = x.shape
    if n < 2 * j:
        raise ParameterError(f"block of {j} channels needs at least {2 * j} samples, got {n}")

    centered, mean = center(x)
    z, transform, evals = whiten(centered)

    rng = np.random.default_rng(config.seed)
    w = symmetric_decorrelation(rng.standard_normal((j, j)))

    converged = False
    history = []
    it = 0
    for it in range(1, config.max_iterations + 1):
        w_new = _sweep(w, z, config.contrast)
        change = float(np.max(np.abs(1.0 - np.abs(np.einsum("ij,ij->i", w_new, w)))))
        history.append(change)
        w = w_new
        if change < config.tolerance:
            converged = True
            break

    if converged and config.refine_sweeps:
        # Extended-precision sweeps pull W onto the fixed point below float64
        # rounding of the length-L expectations.
        z_ext = z.astype(np.longdouble)
        w_ext = w.astype(np.longdouble)
        for _ in range(config.refine_sweeps):
            w_ext = _sweep(w_ext, z_ext, config.contrast)
        w = w_ext.astype(np.float64)

    unmixing = w @ transform
    y = unmixing @ (x - mean[:, None])
    return SeparationResult(
        unmixing=unmixing,
        rotation=w,
        y=y,
        whitener=Whitener(mean, transform, evals),
        iterations_used=it,
        converged=converged,
        history=tuple(history),
    )
