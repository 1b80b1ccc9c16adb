"""Adversarial training loss, its four-term surrogate (Monte Carlo and closed
form) and the singular-value-variance embedding regularizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .attacks import AttackConfig, embedding_attack
from .mathcore import as_spd, regularized_gram, sv_stats
from .model import LsaeParams
from .montecarlo import McConfig, collect, mean_stderr, observations
from .tasks import TaskBatch, TaskConfig


def mc_adversarial_loss(p: LsaeParams, task_cfg: TaskConfig, eps: float, mc: McConfig,
                        atk: AttackConfig | None = None, threads: int | None = None,
                        return_per_task: bool = False):
    """Monte Carlo estimate of the embedding-space adversarial loss.

    The inner maximum is approximated by PGD, so the estimate is a lower bound
    on the true adversarial loss. Returns ``(estimate, stderr)``.
    """
    atk = atk or AttackConfig(radius=eps)
    if atk.radius != eps:
        raise ValueError(f"attack radius {atk.radius} does not match eps={eps}")

    def fn(batch):
        _, loss, _ = embedding_attack(p, batch, atk)
        return {"loss": loss}

    loss = collect(fn, task_cfg, mc, threads)["loss"]
    est, se = mean_stderr(loss, mc.antithetic)
    return (est, se, loss) if return_per_task else (est, se)


def _surrogate_parts(p: LsaeParams, batch: TaskBatch) -> dict:
    """Per-task integrands of the four surrogate terms."""
    n = batch.n
    emb = np.einsum("ij,sjn->sin", p.we, batch.x)
    z = batch.xq @ p.we.T
    ka = z @ p.kq11.T
    kb = z @ p.kq21
    s_u = np.einsum("d,sdn->sn", p.v21, emb) + p.v22 * batch.y
    t = np.einsum("sdn,sd->sn", emb, ka) + batch.y * kb[:, None]
    yhat = (np.sum(s_u * t, axis=1) + (z @ p.v21) * np.einsum("sd,sd->s", z, ka)) / n
    return {
        "r": yhat - batch.yq,
        "t2": np.sum(t * t, axis=1),          # ||C^T K z||^2
        "u2": np.sum(s_u * s_u, axis=1),      # ||u^T C||^2
        "k2": np.sum(ka * ka, axis=1),        # ||kq11 z||^2
    }


@dataclass(frozen=True)
class SurrogateTerms:
    l1: float
    l2: float
    l3: float
    l4: float
    stderr1: float
    stderr2: float
    stderr3: float
    stderr4: float
    stderr: float
    influence: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def total(self) -> float:
        return self.l1 + self.l2 + self.l3 + self.l4


def mc_surrogate_terms(p: LsaeParams, task_cfg: TaskConfig, eps: float, mc: McConfig,
                       threads: int | None = None) -> SurrogateTerms:
    """Monte Carlo estimates of the four surrogate terms.

    The product of expectations in the third term is estimated as a product
    of two sample means over the same batch (O(1/S) bias). Standard errors use
    the per-task linearization (delta method) of each term; ``influence`` holds
    the per-task linearized total for paired comparisons.
    """
    parts = collect(lambda b: _surrogate_parts(p, b), task_cfg, mc, threads)
    n = task_cfg.n
    v21sq = float(p.v21 @ p.v21)
    f2 = 2 * eps**2 / n * v21sq
    f3 = 2 * eps**2 / n
    f4 = 2 * eps**4 * v21sq
    a = 2 * parts["r"] ** 2
    u2, k2, t2 = parts["u2"], parts["k2"], parts["t2"]
    mu_u, mu_k = float(np.mean(u2)), float(np.mean(k2))
    l1, se1 = mean_stderr(a, mc.antithetic)
    m2, se_t = mean_stderr(t2, mc.antithetic)
    _, se4 = mean_stderr(k2, mc.antithetic)
    _, se3 = mean_stderr(u2 * mu_k + mu_u * k2, mc.antithetic)
    influence = a + f2 * t2 + f3 * (u2 * mu_k + mu_u * k2) + f4 * k2
    _, se = mean_stderr(influence, mc.antithetic)
    return SurrogateTerms(
        l1=l1, l2=f2 * m2, l3=f3 * mu_u * mu_k, l4=f4 * mu_k,
        stderr1=se1, stderr2=abs(f2) * se_t, stderr3=f3 * se3, stderr4=f4 * se4, stderr=se,
        influence=influence,
    )


def mc_surrogate_w21_grad(p: LsaeParams, task_cfg: TaskConfig, eps: float, mc: McConfig,
                          threads: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of the Monte Carlo surrogate total with respect to
    ``(v21, kq21)``.

    Per-task contributions are averaged per observation first (antithetic
    pairs are summed before anything else), which makes the odd-in-``w``
    contributions cancel exactly in floating point.
    """
    n = task_cfg.n

    def fn(batch):
        emb = np.einsum("ij,sjn->sin", p.we, batch.x)
        z = batch.xq @ p.we.T
        ka = z @ p.kq11.T
        kb = z @ p.kq21
        zv = z @ p.v21
        s_u = np.einsum("d,sdn->sn", p.v21, emb) + p.v22 * batch.y
        t = np.einsum("sdn,sd->sn", emb, ka) + batch.y * kb[:, None]
        zka = np.einsum("sd,sd->s", z, ka)
        yhat = (np.sum(s_u * t, axis=1) + zv * zka) / n
        r = yhat - batch.yq
        # (E E^T / N) K z, top block, and the label entry of u^T E E^T / N
        mkz_top = (np.einsum("sdn,sn->sd", emb, t) + z * zka[:, None]) / n
        um_last = np.sum(s_u * batch.y, axis=1) / n
        return {
            "g1_v21": 4 * r[:, None] * mkz_top,
            "g1_kq21": 4 * (r * um_last)[:, None] * z,
            "t2": np.sum(t * t, axis=1),
            "ty_z": np.sum(t * batch.y, axis=1)[:, None] * z,
            "pu": np.einsum("sdn,sn->sd", emb, s_u),
            "k2": np.sum(ka * ka, axis=1),
        }

    parts = collect(fn, task_cfg, mc, threads)
    avg = {k: np.mean(observations(v, mc.antithetic), axis=0) for k, v in parts.items()}
    v21sq = float(p.v21 @ p.v21)
    g_v21 = (avg["g1_v21"]
             + 4 * eps**2 / n * p.v21 * avg["t2"]
             + 4 * eps**2 / n * avg["pu"] * avg["k2"]
             + 4 * eps**4 * p.v21 * avg["k2"])
    g_kq21 = avg["g1_kq21"] + 4 * eps**2 / n * v21sq * avg["ty_z"]
    return g_v21, g_kq21


def _require_w21_zero(p: LsaeParams):
    if np.any(p.kq21):
        raise ValueError("closed-form surrogate requires kq21 = 0")
    if np.any(p.v21):
        raise ValueError("closed-form surrogate requires v21 = 0")


def closed_form_surrogate(p: LsaeParams, lam, n: int, eps: float) -> float:
    """Closed-form surrogate loss on the ``kq21 = v21 = 0`` manifold."""
    lam = as_spd(lam)
    _require_w21_zero(p)
    a = regularized_gram(p.we, lam, n, eps)
    g = p.kq11 @ p.we @ lam.sqrt()
    cross = g @ lam.power(1.5) @ p.we.T
    return float(2 * p.v22**2 * np.trace(a @ g @ g.T) - 4 * p.v22 * np.trace(cross) + 2 * lam.trace)


def embedding_reg(we) -> float:
    """Population variance of the singular values of ``we``."""
    return sv_stats(we).variance


class RegGrad(NamedTuple):
    grad: np.ndarray
    degenerate: bool


def embedding_reg_grad(we, gap: float = 1e-8) -> RegGrad:
    """Gradient ``sum_i 2 (sigma_i - mean) / k * u_i v_i^T`` of :func:`embedding_reg`.

    When two singular values are closer than ``gap`` (or a zero singular value
    sits on a rectangular matrix's boundary) the value returned is one
    subgradient and ``degenerate`` is set.
    """
    we = np.asarray(we, dtype=float)
    u, s, vt = np.linalg.svd(we, full_matrices=False)
    k = s.size
    coef = 2 * (s - np.mean(s)) / k
    grad = (u * coef) @ vt
    scale = max(float(s[0]), 1.0)
    degenerate = bool(np.any(np.diff(s) > -gap * scale)) if k > 1 else False
    return RegGrad(grad, degenerate)
