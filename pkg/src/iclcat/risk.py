"""Monte Carlo clean and robust (input-suffix) risk of a predictor.

A predictor is anything with ``batch_predict(x, y, xq, need_grad)`` and a
``d0``: :class:`~iclcat.model.LsaeParams` or :class:`~iclcat.solver.PredictorMatrix`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, project_columns, suffix_attack
from .montecarlo import McConfig, map_tasks, mean_stderr
from .tasks import TaskConfig

RISK_COLUMNS = ("value", "stderr", "num_tasks", "m", "rho", "attack_steps", "attack_step_size")


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    stderr: float
    num_tasks: int
    attack: AttackConfig | None = None
    m: int = 0
    rho: float = 0.0
    per_task: np.ndarray | None = field(default=None, repr=False, compare=False)

    def csv_values(self) -> list:
        steps = self.attack.steps if self.attack else 0
        eta = self.attack.step_size if self.attack else 0.0
        return [self.value, self.stderr, self.num_tasks, self.m, self.rho, steps, eta]


def _check_predictor(predictor, task_cfg: TaskConfig):
    if predictor.d0 != task_cfg.d0:
        raise ValueError(f"predictor input dim {predictor.d0} does not match task dim {task_cfg.d0}")


def _estimate(loss: np.ndarray, mc: McConfig, **kw) -> RiskEstimate:
    value, se = mean_stderr(loss, mc.antithetic)
    return RiskEstimate(value=value, stderr=se, num_tasks=loss.size, per_task=loss, **kw)


def mc_clean_risk(predictor, task_cfg: TaskConfig, mc: McConfig, threads: int | None = None) -> RiskEstimate:
    """Mean of ``0.5 (yhat - yq)^2`` over sampled tasks."""
    _check_predictor(predictor, task_cfg)

    def fn(batch):
        return 0.5 * (predictor.batch_predict(batch.x, batch.y, batch.xq) - batch.yq) ** 2

    loss = np.concatenate(map_tasks(fn, task_cfg, mc, threads))
    return _estimate(loss, mc)


def _resolve_attack(m: int, rho: float, n: int, atk: AttackConfig | None) -> AttackConfig:
    if not 0 <= m <= n:
        raise ValueError(f"suffix length must satisfy 0 <= M <= N, got M={m}, N={n}")
    atk = atk or AttackConfig.for_radius(rho)
    if atk.radius != rho:
        raise ValueError(f"attack radius {atk.radius} does not match rho={rho}")
    return atk


def mc_robust_risk(predictor, task_cfg: TaskConfig, m: int, rho: float, mc: McConfig,
                   atk: AttackConfig | None = None, threads: int | None = None) -> RiskEstimate:
    """PGD estimate of the worst-case risk when the last ``m`` context inputs
    move within column norm ``rho``.

    PGD only finds a feasible perturbation, so this is a lower bound on the true
    worst case; the best iterate includes the unperturbed start, so each task's
    value is never below its clean loss.
    """
    _check_predictor(predictor, task_cfg)
    atk = _resolve_attack(m, rho, task_cfg.n, atk)

    def fn(batch):
        _, loss, _ = suffix_attack(predictor, batch, m, atk)
        return loss

    loss = np.concatenate(map_tasks(fn, task_cfg, mc, threads))
    return _estimate(loss, mc, attack=atk, m=m, rho=rho)


def mc_robust_path(points, task_cfg: TaskConfig, m: int, mc: McConfig, steps: int = 20,
                   threads: int | None = None) -> list[RiskEstimate]:
    """Robust risk along a sequence of ``(predictor, rho)`` points on common tasks.

    Each point's attack starts from the previous point's perturbation projected
    onto the current ball. With a fixed predictor and nondecreasing ``rho`` this
    makes every task's loss nondecreasing along the path.
    """
    points = list(points)
    if not points:
        raise ValueError("path needs at least one point")
    for predictor, _ in points:
        _check_predictor(predictor, task_cfg)
    atks = [_resolve_attack(m, rho, task_cfg.n, AttackConfig.for_radius(rho, steps)) for _, rho in points]

    def fn(batch):
        delta = np.zeros((len(batch), batch.d0, m))
        out = []
        for (predictor, _), atk in zip(points, atks):
            delta, loss, _ = suffix_attack(predictor, batch, m, atk, init=project_columns(delta, atk.radius))
            out.append(loss)
        return out

    chunks = map_tasks(fn, task_cfg, mc, threads)
    return [
        _estimate(np.concatenate([c[i] for c in chunks]), mc, attack=atk, m=m, rho=rho)
        for i, (atk, (_, rho)) in enumerate(zip(atks, points))
    ]

