"""Closed-form optimum of the surrogate problem, its predictor matrix, exact
clean risk and the explicit robust generalization bound."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg as sla

from .mathcore import SingularMatrixError, as_spd, gamma_matrix, regularized_gram
from .model import LsaeParams


def _gram_solve(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        c = sla.cho_factor(a)
    except sla.LinAlgError as exc:
        raise SingularMatrixError("regularized Gram matrix is singular; use eps > 0 or a full-rank W^E") from exc
    ev = np.linalg.eigvalsh(a)
    if ev[0] <= 1e-13 * max(ev[-1], 1.0):
        raise SingularMatrixError("regularized Gram matrix is numerically singular")
    return sla.cho_solve(c, rhs)


@dataclass(frozen=True)
class PredictorMatrix:
    """Linear-attention predictor ``yhat = (1/N) Y X^T B xq``."""

    b: np.ndarray
    we_used: np.ndarray | None = None
    eps: float | None = None
    n: int | None = None

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError("predictor matrix must be square")
        if not np.all(np.isfinite(b)):
            raise ValueError("predictor matrix has non-finite entries")
        object.__setattr__(self, "b", b)

    @property
    def d0(self) -> int:
        return self.b.shape[0]

    def batch_predict(self, x, y, xq, need_grad: bool = False):
        n = x.shape[2]
        g = xq @ self.b.T
        s = np.einsum("sdn,sd->sn", x, g)
        yhat = np.sum(y * s, axis=1) / n
        if not need_grad:
            return yhat
        return yhat, y[:, None, :] * g[:, :, None] / n


def optimal_predictor_matrix(we, lam, n: int, eps: float) -> PredictorMatrix:
    """``B = W^E^T A^{-1} W^E Lambda`` with ``A`` the regularized context Gram matrix."""
    lam = as_spd(lam)
    we = np.asarray(we, dtype=float)
    a = regularized_gram(we, lam, n, eps)
    b = we.T @ _gram_solve(a, we @ lam.entries)
    return PredictorMatrix(b=b, we_used=we.copy(), eps=float(eps), n=int(n))


def lsae_predictor_matrix(p: LsaeParams) -> PredictorMatrix:
    """``v22 W^E^T kq11 W^E``: the predictor encoded by parameters with zero w21 blocks."""
    if not p.w21_is_zero():
        raise ValueError("parameters with nonzero kq21/v21 are not a pure predictor matrix")
    return PredictorMatrix(b=p.v22 * p.we.T @ p.kq11 @ p.we, we_used=p.we.copy())


class InfeasibleFactorizationError(ValueError):
    """No ``kq11`` realizes the optimal product for the given embedding."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def factor_optimal_params(we, lam, n: int, eps: float, v22: float, tol: float = 1e-9) -> LsaeParams:
    """Parameters attaining the surrogate minimum for a fixed embedding.

    Solves ``v22 kq11 W^E = A^{-1} W^E Lambda`` in the least-squares sense and
    accepts the solution only if the residual vanishes (relative ``tol``); this
    holds e.g. for square invertible ``W^E`` or isotropic ``Lambda`` but not in
    general when ``d < d0``.
    """
    if v22 == 0:
        raise ValueError("v22 must be nonzero")
    lam = as_spd(lam)
    we = np.asarray(we, dtype=float)
    d = we.shape[0]
    a = regularized_gram(we, lam, n, eps)
    target = _gram_solve(a, we @ lam.entries)
    kq11 = target @ np.linalg.pinv(we) / v22
    residual = float(np.linalg.norm(v22 * kq11 @ we - target))
    if residual > tol * max(np.linalg.norm(target), 1.0):
        raise InfeasibleFactorizationError(
            f"optimal product is not attainable for this embedding (residual {residual:.3g}); "
            "range(Lambda W^E^T) is not contained in range(W^E^T)",
            residual,
        )
    z = np.zeros(d)
    return LsaeParams(we=we, kq11=kq11, kq12=z, kq21=z, kq22=0.0, v11=np.zeros((d, d)), v12=z, v21=z, v22=v22)


def surrogate_minimum(we, lam, n: int, eps: float) -> float:
    """``-2 Tr[A^{-1} W^E Lambda^3 W^E^T] + 2 Tr(Lambda)``, the attainable surrogate minimum."""
    lam = as_spd(lam)
    we = np.asarray(we, dtype=float)
    a = regularized_gram(we, lam, n, eps)
    c = we @ lam.power(3) @ we.T
    return float(-2 * np.trace(_gram_solve(a, c)) + 2 * lam.trace)


def clean_risk_exact(b, lam, n: int) -> float:
    """Population clean risk ``E 0.5 (yhat_B - yq)^2``."""
    lam = as_spd(lam)
    bm = b.b if isinstance(b, PredictorMatrix) else np.asarray(b, dtype=float)
    L = lam.entries
    gl = gamma_matrix(lam, n) @ L
    return float(0.5 * (np.trace(bm.T @ gl @ bm @ L) - 2 * np.trace(L @ bm @ L) + lam.trace))


@dataclass(frozen=True)
class BoundReport:
    sigma_max_gamma_lambda: float
    attack_term: float
    lambda_max_cubed: float
    sum_sigma4: float
    denom: float
    main_term: float
    residual: float
    bound: float

    def csv_header(self) -> list[str]:
        return list(asdict(self))

    def csv_values(self) -> list[float]:
        return list(asdict(self).values())


def robust_bound(we, lam, n: int, eps: float, m: int, rho: float) -> BoundReport:
    """Explicit robust-risk upper bound for the closed-form optimal predictor.

    ``[(sigma_max(G L) + M rho^2 Tr(L)/N^2) lambda_max(L)^3 sum_i sigma_i(W)^4]
    / [sigma_min(G L) sigma_min(W)^2 + Tr(L) eps^2]^2 + Tr(L)``.
    """
    lam = as_spd(lam)
    we = np.asarray(we, dtype=float)
    if we.ndim != 2 or we.shape[1] != lam.dim:
        raise ValueError("embedding width must equal the covariance dimension")
    if we.shape[0] > we.shape[1]:
        raise ValueError(f"robust bound requires embedding dim d <= input dim d0 (got d={we.shape[0]}, d0={we.shape[1]})")
    if not 0 <= m <= n:
        raise ValueError(f"suffix length must satisfy 0 <= M <= N, got M={m}, N={n}")
    gl_sv = np.linalg.svd(gamma_matrix(lam, n) @ lam.entries, compute_uv=False)
    s = np.linalg.svd(we, compute_uv=False)
    attack = m * rho**2 * lam.trace / n**2
    lmax3 = lam.lambda_max**3
    sum4 = float(np.sum(s**4))
    denom = float((gl_sv[-1] * s[-1] ** 2 + lam.trace * eps**2) ** 2)
    num = (float(gl_sv[0]) + attack) * lmax3 * sum4
    main = num / denom if denom > 0 else float("inf")
    return BoundReport(
        sigma_max_gamma_lambda=float(gl_sv[0]), attack_term=float(attack), lambda_max_cubed=float(lmax3),
        sum_sigma4=sum4, denom=denom, main_term=float(main), residual=lam.trace, bound=float(main + lam.trace),
    )
