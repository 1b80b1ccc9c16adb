"""Euler-discretized gradient flow on the closed-form surrogate, optionally
training the embedding under the singular-value-variance regularizer."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .losses import closed_form_surrogate, embedding_reg, embedding_reg_grad
from .mathcore import as_spd, gamma_matrix, regularized_gram, sv_stats
from .model import LsaeParams
from .solver import _gram_solve

log = logging.getLogger(__name__)

# relative slack for the no-increase test; absorbs rounding in the objective
_NOISE = 1e-14

TRAJECTORY_COLUMNS = ("step", "loss", "stationarity_residual", "sv_min", "sv_max", "sv_var", "reg_value")


class TrainingDivergedError(RuntimeError):
    pass


def default_theta(d: int) -> np.ndarray:
    # c I with ||(cI)(cI)^T||_F = c^2 sqrt(d) = 1
    return d ** -0.25 * np.eye(d)


def identity_embedding(d: int, d0: int, scale: float = 1.0) -> np.ndarray:
    return scale * np.eye(d, d0)


@dataclass(frozen=True)
class InitSpec:
    zeta: float = 0.1
    theta: np.ndarray | None = None
    we_init: str | np.ndarray = "identity"
    we_scale: float = 1.0

    def embedding(self, d: int, d0: int) -> np.ndarray:
        if isinstance(self.we_init, str):
            if self.we_init == "identity":
                return identity_embedding(d, d0)
            if self.we_init == "scaled":
                return identity_embedding(d, d0, self.we_scale)
            raise ValueError(f"unknown embedding init {self.we_init!r}")
        we = np.array(self.we_init, dtype=float)
        if we.shape != (d, d0):
            raise ValueError(f"explicit embedding must be {d}x{d0}, got {we.shape}")
        return we


def init_params(d: int, d0: int, spec: InitSpec, lam=None) -> LsaeParams:
    """Symmetric initialization: ``W^V`` zero except ``v22 = zeta``, ``kq11 = zeta Theta Theta^T``."""
    if spec.zeta <= 0:
        raise ValueError("zeta must be positive")
    theta = default_theta(d) if spec.theta is None else np.asarray(spec.theta, dtype=float)
    if theta.shape != (d, d):
        raise ValueError(f"Theta must be {d}x{d}")
    tt = theta @ theta.T
    if abs(np.linalg.norm(tt) - 1) > 1e-10:
        raise ValueError(f"||Theta Theta^T||_F must be 1, got {np.linalg.norm(tt):.12g}")
    if lam is not None and as_spd(lam).dim == d:
        if not np.any(theta @ as_spd(lam).entries):
            raise ValueError("Theta Lambda must be nonzero")
    elif not np.any(theta):
        raise ValueError("Theta must be nonzero")
    z = np.zeros(d)
    return LsaeParams(
        we=spec.embedding(d, d0), kq11=spec.zeta * tt, kq12=z, kq21=z, kq22=0.0,
        v11=np.zeros((d, d)), v12=z, v21=z, v22=spec.zeta,
    )


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20_000
    lr: float = 0.05
    train_we: bool = False
    beta: float = 0.5
    eps: float = 0.05
    tol: float = 0.0
    log_every: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.lr <= 0:
            raise ValueError("need steps >= 1 and lr > 0")
        if self.beta < 0 or self.eps < 0:
            raise ValueError("beta and eps must be nonnegative")


class _Objective:
    """Closed-form surrogate (+ regularizer) with its gradient; caches the
    embedding-dependent pieces while ``we`` is unchanged."""

    def __init__(self, lam, n, eps, beta, train_we):
        self.lam, self.eps, self.beta, self.train_we = lam, eps, beta, train_we
        L = lam.entries
        s = gamma_matrix(lam, n) @ L
        self.s = (s + s.T) / 2
        self.L, self.L2 = L, L @ L
        self._we = None

    def _embedding_terms(self, we):
        if self._we is None or not np.array_equal(we, self._we):
            a = we @ self.s @ we.T + self.lam.trace * self.eps**2 * np.eye(we.shape[0])
            self._terms = (a, we @ self.L @ we.T, we @ self.L2 @ we.T)
            self._we = we.copy()
        return self._terms

    def __call__(self, kq11, v22, we, need_grad=True):
        a, q, r = self._embedding_terms(we)
        akq = a @ kq11 @ q
        quad = np.trace(akq @ kq11.T)
        lin = np.trace(kq11 @ r)
        value = 2 * v22**2 * quad - 4 * v22 * lin + 2 * self.lam.trace
        use_reg = self.train_we and self.beta > 0
        if use_reg:
            value += self.beta * embedding_reg(we)
        if not need_grad:
            return float(value), None
        g_k = 4 * v22**2 * akq - 4 * v22 * r
        g_v = 4 * v22 * quad - 4 * lin
        g_w = None
        if self.train_we:
            m = kq11 @ q @ kq11.T
            g_w = (4 * v22**2 * (m @ we @ self.s + kq11.T @ a @ kq11 @ we @ self.L)
                   - 4 * v22 * (kq11 + kq11.T) @ we @ self.L2)
            if use_reg:
                g_w = g_w + self.beta * embedding_reg_grad(we).grad
        return float(value), (g_k, float(g_v), g_w)


def _require_w21_zero(p: LsaeParams):
    if np.any(p.kq21) or np.any(p.v21):
        raise ValueError("surrogate gradient requires kq21 = v21 = 0")


def surrogate_grad(p: LsaeParams, lam, n: int, eps: float, beta: float = 0.0, train_we: bool = False):
    """Gradient of the closed-form surrogate (plus ``beta * embedding_reg`` when
    training the embedding) with respect to ``kq11``, ``v22`` and optionally ``we``.

    Returns a dict with keys ``kq11``, ``v22`` and (if ``train_we``) ``we``.
    """
    _require_w21_zero(p)
    _, (g_k, g_v, g_w) = _Objective(as_spd(lam), n, eps, beta, train_we)(p.kq11, p.v22, p.we)
    out = {"kq11": g_k, "v22": g_v}
    if train_we:
        out["we"] = g_w
    return out


def check_stationarity(p: LsaeParams, lam, n: int, eps: float) -> float:
    """``||v22 W^T kq11 W - W^T A^{-1} W Lambda||_F``."""
    lam = as_spd(lam)
    a = regularized_gram(p.we, lam, n, eps)
    target = p.we.T @ _gram_solve(a, p.we @ lam.entries)
    return float(np.linalg.norm(p.v22 * p.we.T @ p.kq11 @ p.we - target))


@dataclass
class TrainResult:
    params: LsaeParams
    trajectory: list = field(default_factory=list)
    final_lr: float = 0.0
    steps_taken: int = 0

    @property
    def final_loss(self) -> float:
        return self.trajectory[-1][1]


def _log_row(step, value, p, lam, n, cfg):
    st = sv_stats(p.we)
    try:
        resid = check_stationarity(p, lam, n, cfg.eps)
    except ValueError:
        resid = float("nan")
    reg = cfg.beta * st.variance if cfg.train_we else 0.0
    return (step, value, resid, st.sv_min, st.sv_max, st.variance, reg)


def train_surrogate(init: LsaeParams, lam, n: int, cfg: TrainConfig) -> TrainResult:
    """Explicit Euler steps of the gradient flow with halve-on-increase step control.

    A step is accepted only if the objective does not increase beyond
    floating-point noise; otherwise the step size is halved and the step
    retried. ``kq21`` and ``v21`` are never touched, so they stay exactly zero.
    """
    _require_w21_zero(init)
    lam = as_spd(lam)
    f = _Objective(lam, n, cfg.eps, cfg.beta, cfg.train_we)
    kq11, v22, we = init.kq11.copy(), init.v22, init.we.copy()
    lr = cfg.lr
    value, grads = f(kq11, v22, we)
    if not np.isfinite(value) or value > 1e12:
        raise TrainingDivergedError(f"initial surrogate value {value:.3g} is not finite or too large")
    log_every = cfg.log_every or max(1, cfg.steps // 100)
    rows = [_log_row(0, value, init, lam, n, cfg)]
    step = 0
    for step in range(1, cfg.steps + 1):
        g_k, g_v, g_w = grads
        for _ in range(80):
            c_k, c_v = kq11 - lr * g_k, v22 - lr * g_v
            c_w = we - lr * g_w if cfg.train_we else we
            c_val, c_grads = f(c_k, c_v, c_w)
            if c_val <= value + _NOISE * abs(value):
                break
            lr *= 0.5
        else:
            log.info("step control exhausted at step %d; treating as converged", step)
            step -= 1
            break
        if not np.isfinite(c_val) or c_val > 1e12:
            raise TrainingDivergedError(f"surrogate diverged at step {step}: loss={c_val:.3g}, lr={lr:.3g}")
        kq11, v22, we, value, grads = c_k, c_v, c_w, c_val, c_grads
        done = False
        if cfg.tol > 0:
            gmax = max(np.max(np.abs(grads[0])), abs(grads[1]), np.max(np.abs(grads[2])) if cfg.train_we else 0.0)
            done = gmax <= cfg.tol
        if step % log_every == 0 or done or step == cfg.steps:
            rows.append(_log_row(step, value, init.replace(kq11=kq11, v22=v22, we=we), lam, n, cfg))
        if done:
            break
    final = init.replace(kq11=kq11, v22=v22, we=we)
    if rows[-1][0] != step:
        rows.append(_log_row(step, value, final, lam, n, cfg))
    return TrainResult(params=final, trajectory=rows, final_lr=lr, steps_taken=step)


def objective_value(p: LsaeParams, lam, n: int, eps: float, beta: float = 0.0, train_we: bool = False) -> float:
    value = closed_form_surrogate(p, lam, n, eps)
    if train_we and beta > 0:
        value += beta * embedding_reg(p.we)
    return value
