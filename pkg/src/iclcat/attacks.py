"""Inner maximization: column-ball projection, loss gradients with respect to
perturbations, and normalized-ascent PGD in embedding and input-suffix space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    EMBEDDING,
    INPUT_SUFFIX,
    LsaeParams,
    Perturbation,
    embedding_batch_predict,
    perturb_suffix,
)
from .tasks import TaskBatch, TaskSample


@dataclass(frozen=True)
class AttackConfig:
    steps: int = 10
    step_size: float = 1e-2
    radius: float = 0.05
    restarts: int = 0  # extra runs, each started at the antipode of the best perturbation so far

    def __post_init__(self):
        if self.restarts < 0:
            raise ValueError("restarts must be nonnegative")
        if self.steps < 1:
            raise ValueError("attack needs at least one step")
        if self.step_size <= 0:
            raise ValueError("step size must be positive")
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")

    @classmethod
    def for_radius(cls, radius: float, steps: int = 20) -> "AttackConfig":
        """Evaluation-strength attack with step size radius/10 (tiny positive step at radius 0)."""
        return cls(steps=steps, step_size=radius / 10 if radius > 0 else 1e-12, radius=radius)


def project_columns(delta, radius: float) -> np.ndarray:
    """Euclidean projection of every column (axis -2 holds the coordinates) onto the radius ball."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    delta = np.asarray(delta, dtype=float)
    if radius == 0:
        return np.zeros_like(delta)
    norms = np.linalg.norm(delta, axis=-2, keepdims=True)
    scale = np.where(norms > radius, radius / np.where(norms > 0, norms, 1.0), 1.0)
    return delta * scale


def _as_batch(s: TaskSample) -> TaskBatch:
    return TaskBatch.from_samples([s])


def embedding_loss_grad(p: LsaeParams, batch: TaskBatch, delta):
    """Per-task ``0.5 (yhat_adv - yq)^2`` and its gradient with respect to ``delta`` (S, d, N)."""
    yhat, dy = embedding_batch_predict(p, batch.x, batch.y, batch.xq, delta, need_grad=True)
    r = yhat - batch.yq
    return 0.5 * r**2, r[:, None, None] * dy


def suffix_loss_grad(predictor, batch: TaskBatch, delta):
    """Per-task squared loss with the last ``M`` context points shifted by ``delta`` (S, d0, M)."""
    m = delta.shape[-1]
    xs = perturb_suffix(batch.x, delta)
    yhat, dx = predictor.batch_predict(xs, batch.y, batch.xq, need_grad=True)
    r = yhat - batch.yq
    grad = r[:, None, None] * dx[:, :, batch.n - m :]
    return 0.5 * r**2, grad


def grad_embedding(p: LsaeParams, s: TaskSample, delta) -> np.ndarray:
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (p.d, s.n):
        raise ValueError(f"embedding perturbation must be {p.d}x{s.n}, got {delta.shape}")
    if p.d0 != s.d0:
        raise ValueError("task dimension does not match the embedding")
    _, g = embedding_loss_grad(p, _as_batch(s), delta[None])
    return g[0]


def grad_suffix(predictor, s: TaskSample, delta, m: int | None = None) -> np.ndarray:
    delta = np.asarray(delta, dtype=float)
    if m is None:
        m = delta.shape[1]
    if delta.shape != (s.d0, m):
        raise ValueError(f"suffix perturbation must be {s.d0}x{m}, got {delta.shape}")
    if m > s.n:
        raise ValueError(f"suffix length {m} exceeds context length {s.n}")
    _, g = suffix_loss_grad(predictor, _as_batch(s), delta[None])
    return g[0]


def _ascend(loss_grad, delta, cfg: AttackConfig):
    loss, grad = loss_grad(delta)
    best, best_loss = delta.copy(), loss.copy()
    for _ in range(cfg.steps):
        norms = np.linalg.norm(grad, axis=-2, keepdims=True)
        step = np.divide(grad, norms, out=np.zeros_like(grad), where=norms > 0)
        delta = project_columns(delta + cfg.step_size * step, cfg.radius)
        loss, grad = loss_grad(delta)
        better = loss > best_loss
        best[better] = delta[better]
        best_loss = np.where(better, loss, best_loss)
    return best, best_loss


def pgd(loss_grad, init, cfg: AttackConfig):
    """Best-iterate normalized projected ascent on a batch of perturbations.

    ``loss_grad(delta) -> (loss (S,), grad like delta)``; ``init`` is feasible.
    Each column moves by ``step_size`` along its normalized gradient (zero-gradient
    columns stay put) and is projected back onto the radius ball. Returns the
    highest-loss iterate per task (the start counts as an iterate) and its loss.

    With ``cfg.restarts > 0`` the ascent is rerun from the negated best
    perturbation, which escapes the sign-flipped local maxima that the quartic
    embedding loss produces; the overall best iterate is kept.
    """
    delta = project_columns(init, cfg.radius)
    if cfg.radius == 0 or delta.shape[-1] == 0:
        return delta, loss_grad(delta)[0]
    best, best_loss = _ascend(loss_grad, delta, cfg)
    for _ in range(cfg.restarts):
        cand, cand_loss = _ascend(loss_grad, -best, cfg)
        better = cand_loss > best_loss
        best[better] = cand[better]
        best_loss = np.where(better, cand_loss, best_loss)
    return best, best_loss


def embedding_attack(p: LsaeParams, batch: TaskBatch, cfg: AttackConfig, init=None):
    """Batched embedding-space attack; returns ``(delta, adv_loss, clean_loss)``."""
    if init is None:
        init = np.zeros((len(batch), p.d, batch.n))
    clean, _ = embedding_loss_grad(p, batch, np.zeros((len(batch), p.d, batch.n)))
    delta, loss = pgd(lambda d: embedding_loss_grad(p, batch, d), init, cfg)
    return delta, loss, clean


def suffix_attack(predictor, batch: TaskBatch, m: int, cfg: AttackConfig, init=None):
    """Batched input-suffix attack on the last ``m`` context points."""
    if m > batch.n:
        raise ValueError(f"suffix length {m} exceeds context length {batch.n}")
    zeros = np.zeros((len(batch), batch.d0, m))
    if init is None:
        init = zeros
    clean, _ = suffix_loss_grad(predictor, batch, zeros)
    delta, loss = pgd(lambda d: suffix_loss_grad(predictor, batch, d), init, cfg)
    return delta, loss, clean


def pgd_embedding(p: LsaeParams, s: TaskSample, cfg: AttackConfig) -> Perturbation:
    if p.d0 != s.d0:
        raise ValueError("task dimension does not match the embedding")
    delta, _, _ = embedding_attack(p, _as_batch(s), cfg)
    return Perturbation(delta[0], cfg.radius, EMBEDDING)


def pgd_suffix(predictor, s: TaskSample, m: int, cfg: AttackConfig) -> Perturbation:
    delta, _, _ = suffix_attack(predictor, _as_batch(s), m, cfg)
    return Perturbation(delta[0], cfg.radius, INPUT_SUFFIX)
