"""Dense complex matrix kernels.

All functions accept a single ``(d, d)`` matrix or a stack ``(..., d, d)``
and operate on the trailing two axes.  Norms are operator norms computed
from a full singular value decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tolerances import DEFAULT

__all__ = [
    "FiniteMean",
    "InvertibilityError",
    "adjoint",
    "herm_abs",
    "matrix_mean",
    "op_norm",
    "polar_unitary_factor",
    "random_hermitian",
    "random_unitary",
    "unitarity_defect",
]


class InvertibilityError(ArithmeticError):
    """Smallest singular value fell below the invertibility margin."""

    def __init__(self, index, sigma_min: float, margin: float):
        self.index = index
        self.sigma_min = sigma_min
        self.margin = margin
        super().__init__(
            f"matrix {index}: smallest singular value {sigma_min:.3e} below margin {margin:.3e}"
        )


def adjoint(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def op_norm(A: np.ndarray) -> np.ndarray | float:
    A = np.asarray(A)
    if A.shape[-1] == 1 and A.shape[-2] == 1:
        out = np.abs(A[..., 0, 0])
    else:
        out = np.linalg.svd(A, compute_uv=False)[..., 0]
    return float(out) if out.ndim == 0 else out


def unitarity_defect(U: np.ndarray) -> np.ndarray | float:
    U = np.asarray(U)
    eye = np.eye(U.shape[-1])
    return op_norm(adjoint(U) @ U - eye)


def herm_abs(A: np.ndarray, clamp_tol: float = DEFAULT.clamp_tol) -> np.ndarray:
    """(A* A)^(1/2) via Hermitian eigendecomposition.

    Eigenvalues below ``clamp_tol`` are clamped at zero before the square
    root so round-off negatives cannot produce NaNs.
    """
    A = np.asarray(A, dtype=complex)
    w, V = np.linalg.eigh(adjoint(A) @ A)
    w = np.where(w < clamp_tol, np.maximum(w, 0.0), w)
    return (V * np.sqrt(w)[..., None, :]) @ adjoint(V)


def polar_unitary_factor(A: np.ndarray, invertibility_margin: float = DEFAULT.invertibility_margin) -> np.ndarray:
    """Unitary W with A = W |A|, computed as U V* from A = U S V*."""
    A = np.asarray(A, dtype=complex)
    U, s, Vh = np.linalg.svd(A)
    smin = s[..., -1]
    bad = np.argwhere(np.atleast_1d(smin) < invertibility_margin)
    if bad.size:
        where = tuple(int(i) for i in bad[0]) if smin.ndim else ()
        raise InvertibilityError(where, float(np.atleast_1d(smin)[tuple(bad[0])]), invertibility_margin)
    return U @ Vh


@dataclass(frozen=True)
class FiniteMean:
    """Finitely supported probability weights over an indexed family."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=float)
        if points.shape != weights.shape or points.ndim != 1:
            raise ValueError("points and weights must be 1-d arrays of equal length")
        if (weights < 0).any():
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > DEFAULT.mean_weight_tol:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, n_or_points) -> "FiniteMean":
        points = np.arange(n_or_points) if np.ndim(n_or_points) == 0 else np.asarray(n_or_points)
        return cls(points, np.full(len(points), 1.0 / len(points)))

    def __len__(self) -> int:
        return len(self.points)

    def expect(self, values: np.ndarray) -> np.ndarray:
        """Weighted mean of ``values[points]`` along the first axis."""
        v = np.asarray(values)[self.points]
        return np.tensordot(self.weights, v, axes=(0, 0))


def matrix_mean(family: np.ndarray | Sequence[np.ndarray], mu: FiniteMean) -> np.ndarray:
    """Sum of ``weights[i] * family[points[i]]``."""
    try:
        fam = np.asarray(family)
    except ValueError:
        fam = None
    if fam is None or fam.ndim != 3 or fam.shape[1] != fam.shape[2]:
        shapes = sorted({np.shape(m) for m in family})
        raise ValueError(f"family must hold square matrices of one dimension, got shapes {shapes}")
    if len(mu.points) and mu.points.max() >= len(fam):
        raise IndexError("mean references a point outside the family")
    return mu.expect(fam)


def random_hermitian(d: int, rng: np.random.Generator) -> np.ndarray:
    """Random Hermitian matrix of unit operator norm."""
    A = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    Hm = (A + adjoint(A)) / 2
    return Hm / op_norm(Hm)


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR with phase correction."""
    Z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    Qm, R = np.linalg.qr(Z)
    ph = np.diagonal(R) / np.abs(np.diagonal(R))
    return Qm * ph
