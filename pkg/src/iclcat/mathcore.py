"""Dense SPD matrices, Gaussian moment identities and singular-value statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ASYM_RTOL = 1e-8


class SingularMatrixError(ValueError):
    """Raised when a matrix that must be inverted is (numerically) singular."""


class SpdMatrix:
    """Symmetric positive-definite matrix with a cached eigendecomposition.

    The input is symmetrized as ``(A + A.T) / 2``; inputs whose relative
    asymmetry exceeds 1e-8 are rejected. Eigenvalues are stored in
    descending order.
    """

    def __init__(self, entries):
        a = np.array(entries, dtype=float, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise ValueError(f"expected a nonempty square matrix, got shape {a.shape}")
        scale = np.linalg.norm(a)
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix has non-finite entries")
        if scale > 0 and np.linalg.norm(a - a.T) > _ASYM_RTOL * scale:
            raise ValueError("matrix is not symmetric")
        a = (a + a.T) / 2
        vals, vecs = np.linalg.eigh(a)
        vals, vecs = vals[::-1], vecs[:, ::-1]
        if vals[-1] <= 0:
            raise ValueError(f"matrix is not positive definite (min eigenvalue {vals[-1]:.3g})")
        a.setflags(write=False)
        vals.setflags(write=False)
        vecs = np.ascontiguousarray(vecs)
        vecs.setflags(write=False)
        self.entries = a
        self.eigvals = vals
        self.eigvecs = vecs

    @classmethod
    def identity(cls, dim: int) -> "SpdMatrix":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, values) -> "SpdMatrix":
        return cls(np.diag(np.asarray(values, dtype=float)))

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator, spread: float = 3.0) -> "SpdMatrix":
        """Random rotation of a diagonal with eigenvalues in ``[1/spread, 1] * spread**0.5``."""
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        vals = np.sqrt(spread) * spread ** (-rng.uniform(0.0, 1.0, dim))
        return cls((q * vals) @ q.T)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> float:
        return float(np.sum(self.eigvals))

    @property
    def lambda_max(self) -> float:
        return float(self.eigvals[0])

    @property
    def lambda_min(self) -> float:
        return float(self.eigvals[-1])

    def power(self, p: float) -> np.ndarray:
        return (self.eigvecs * self.eigvals**p) @ self.eigvecs.T

    def sqrt(self) -> np.ndarray:
        return self.power(0.5)

    def sampling_factor(self) -> np.ndarray:
        """``U diag(sqrt(lambda))`` so that ``factor @ z`` has covariance ``self``."""
        return self.eigvecs * np.sqrt(self.eigvals)

    def reconstruct(self) -> np.ndarray:
        return (self.eigvecs * self.eigvals) @ self.eigvecs.T

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __repr__(self) -> str:
        return f"SpdMatrix(dim={self.dim}, eigvals={np.array2string(self.eigvals, precision=4)})"


def as_spd(lam) -> SpdMatrix:
    return lam if isinstance(lam, SpdMatrix) else SpdMatrix(lam)


def _check_square(a: np.ndarray, dim: int, name: str = "a") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}, got {a.shape}")
    return a


def gaussian_fourth_moment(lam, a) -> np.ndarray:
    """``E[x x^T A x x^T]`` for ``x ~ N(0, lam)``: ``lam (A + A^T) lam + Tr(A lam) lam``."""
    lam = as_spd(lam)
    L = lam.entries
    a = _check_square(a, lam.dim)
    return L @ (a + a.T) @ L + np.trace(a @ L) * L


def quad_form_expectation(lam, a) -> float:
    """``E[x^T A x]`` for ``x ~ N(0, lam)``."""
    lam = as_spd(lam)
    a = _check_square(a, lam.dim)
    return float(np.trace(a @ lam.entries))


@dataclass(frozen=True)
class SpectralStats:
    singular_values: np.ndarray
    mean: float
    variance: float

    @property
    def sv_min(self) -> float:
        return float(self.singular_values[-1])

    @property
    def sv_max(self) -> float:
        return float(self.singular_values[0])


def sv_stats(w) -> SpectralStats:
    """Singular values (descending) with their mean and population variance.

    Statistics run over the ``min(rows, cols)`` singular values, which is the
    row count ``d`` for the usual ``d <= d0`` embedding matrices.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.size == 0:
        raise ValueError("sv_stats needs a nonempty 2-D matrix")
    s = np.linalg.svd(w, compute_uv=False)
    mean = float(np.mean(s))
    var = float(np.sum((s - mean) ** 2) / s.size)
    return SpectralStats(singular_values=s, mean=mean, variance=var)


def gamma_matrix(lam: SpdMatrix, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"context length must be >= 1, got {n}")
    L = lam.entries
    return (n + 1) / n * L + lam.trace / n * np.eye(lam.dim)


def regularized_gram(we, lam: SpdMatrix, n: int, eps: float) -> np.ndarray:
    """``W^E Gamma_N Lambda W^E^T + Tr(Lambda) eps^2 I_d`` (symmetrized)."""
    we = np.asarray(we, dtype=float)
    if we.ndim != 2 or we.shape[1] != lam.dim:
        raise ValueError(f"embedding must have {lam.dim} columns, got shape {we.shape}")
    gl = gamma_matrix(lam, n) @ lam.entries
    a = we @ gl @ we.T + lam.trace * eps**2 * np.eye(we.shape[0])
    return (a + a.T) / 2


def inverse_norm_bound(we, lam, n: int, eps: float) -> tuple[float, float]:
    """Spectral norm of the inverse regularized Gram matrix and its closed-form bound.

    Returns ``(lhs, rhs)`` with ``lhs = ||A^{-1}||_2`` and
    ``rhs = 1 / (sigma_min(Gamma_N Lambda) sigma_min(W^E)^2 + Tr(Lambda) eps^2)``.
    """
    lam = as_spd(lam)
    we = np.asarray(we, dtype=float)
    if we.shape[0] > we.shape[1]:
        raise ValueError("inverse_norm_bound assumes d <= d0")
    a = regularized_gram(we, lam, n, eps)
    ev = np.linalg.eigvalsh(a)
    if ev[0] <= 1e-14 * max(ev[-1], 1.0):
        raise SingularMatrixError("regularized Gram matrix is not invertible (eps = 0 and W^E rank-deficient?)")
    lhs = float(np.linalg.norm(np.linalg.inv(a), 2))
    gl_min = float(np.min(np.linalg.svd(gamma_matrix(lam, n) @ lam.entries, compute_uv=False)))
    we_min = float(np.linalg.svd(we, compute_uv=False)[-1])
    rhs = 1.0 / (gl_min * we_min**2 + lam.trace * eps**2)
    return lhs, rhs
