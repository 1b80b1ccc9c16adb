"""Self-check suite: every structural identity, bound and oracle the package
relies on, run at reduced sample sizes and reported one line per check.

Checks draw randomness from streams keyed by ``(seed, check index)``, so the
report depends only on the seed (and the experiment config for the handful of
config-driven checks), never on timing or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses, solver
from .attacks import (
    AttackConfig,
    embedding_loss_grad,
    grad_embedding,
    grad_suffix,
    pgd_embedding,
    pgd_suffix,
    suffix_loss_grad,
)
from .config import ExperimentConfig
from .mathcore import SpdMatrix, gaussian_fourth_moment, inverse_norm_bound, quad_form_expectation
from .model import LsaeParams, assemble_icl_input, forward_full, params_from_csv, params_to_csv, predict
from .montecarlo import McConfig, mean_stderr
from .risk import mc_clean_risk, mc_robust_path, mc_robust_risk
from .tasks import TaskBatch, TaskConfig, sample_task
from .trainer import InitSpec, TrainConfig, check_stationarity, init_params, surrogate_grad, train_surrogate

REPORT_COLUMNS = ("name", "status", "measured", "threshold")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def line(self) -> str:
        return f"{self.name},{self.status},{self.measured:.10g},{self.threshold:.10g}"


@dataclass
class Context:
    cfg: ExperimentConfig
    seed: int
    threads: int | None
    cache: dict = field(default_factory=dict)

    def rng(self, key: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, key])

    def mc(self, num_tasks: int, key: int, antithetic: bool = False) -> McConfig:
        return McConfig(num_tasks=num_tasks, seed=self.seed * 1000 + key, antithetic=antithetic)


_CHECKS: list = []


def check(name: str, threshold: float, higher_is_better: bool = False):
    def deco(fn):
        _CHECKS.append((name, threshold, higher_is_better, fn))
        return fn
    return deco


def check_names() -> list[str]:
    return [c[0] for c in _CHECKS]


# helpers

def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def _random_params(rng, d: int, d0: int, w21: bool = True, scale: float = 0.5) -> LsaeParams:
    def g(*shape):
        return scale * rng.standard_normal(shape)
    z = np.zeros(d)
    return LsaeParams(
        we=np.eye(d, d0) + g(d, d0) * 0.5, kq11=g(d, d), kq12=g(d), kq21=g(d) if w21 else z, kq22=float(g()),
        v11=g(d, d), v12=g(d), v21=g(d) if w21 else z, v22=float(1 + g()),
    )


def _central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        out[idx] = (f(xp) - f(xm)) / (2 * h)
    return out


def _task(rng, d0: int, n: int, lam=None):
    lam = lam if lam is not None else SpdMatrix.random(d0, rng)
    return sample_task(TaskConfig(d0, n, lam), rng)


# moment identities

@check("fourth_moment_matches_sampling_zscore", 5.0)
def _fourth_moment(ctx: Context) -> float:
    rng = ctx.rng(1)
    worst = 0.0
    for _ in range(3):
        lam = SpdMatrix.random(3, rng)
        a = rng.standard_normal((3, 3))
        x = rng.standard_normal((20_000, 3)) @ lam.sampling_factor().T
        q = np.einsum("si,ij,sj->s", x, a, x)
        samples = x[:, :, None] * x[:, None, :] * q[:, None, None]
        se = samples.std(axis=0, ddof=1) / np.sqrt(len(x))
        worst = max(worst, float(np.max(np.abs(samples.mean(axis=0) - gaussian_fourth_moment(lam, a)) / se)))
    return worst


@check("quadratic_form_mean_matches_sampling_zscore", 5.0)
def _quad_form(ctx: Context) -> float:
    rng = ctx.rng(2)
    worst = 0.0
    for _ in range(5):
        lam = SpdMatrix.random(4, rng)
        a = rng.standard_normal((4, 4))
        x = rng.standard_normal((20_000, 4)) @ lam.sampling_factor().T
        q = np.einsum("si,ij,sj->s", x, a, x)
        m, se = mean_stderr(q)
        worst = max(worst, abs(m - quad_form_expectation(lam, a)) / se)
    return worst


@check("spd_eigendecomposition_reconstructs", 1e-12)
def _spd(ctx: Context) -> float:
    rng = ctx.rng(3)
    lam = SpdMatrix.random(6, rng)
    return _rel(lam.reconstruct(), lam.entries) + _rel(lam.sqrt() @ lam.sqrt(), lam.entries)


# model structure

@check("full_forward_matches_bilinear_prediction", 1e-10)
def _forward(ctx: Context) -> float:
    rng = ctx.rng(4)
    worst = 0.0
    for _ in range(20):
        d0, d, n = rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 8)
        p = _random_params(rng, d, d0)
        s = _task(rng, d0, n)
        full = forward_full(p, assemble_icl_input(s))[-1, -1]
        worst = max(worst, abs(full - predict(p, s)) / max(abs(full), 1e-12))
    return worst


@check("batched_prediction_matches_single_task", 1e-10)
def _batched(ctx: Context) -> float:
    rng = ctx.rng(5)
    p = _random_params(rng, 3, 4)
    samples = [_task(rng, 4, 6, SpdMatrix.identity(4)) for _ in range(10)]
    batch = TaskBatch.from_samples(samples)
    return _rel(p.batch_predict(batch.x, batch.y, batch.xq), [predict(p, s) for s in samples])


@check("parameter_csv_round_trip_error", 0.0)
def _roundtrip(ctx: Context) -> float:
    p = _random_params(ctx.rng(6), 3, 5, w21=False)
    q = params_from_csv(params_to_csv(p))
    return 0.0 if q.equals(p) else 1.0


# attack gradients and PGD

@check("embedding_attack_gradient_vs_finite_difference", 1e-5)
def _grad_emb(ctx: Context) -> float:
    rng = ctx.rng(7)
    worst = 0.0
    for _ in range(5):
        p = _random_params(rng, 3, 3)
        s = _task(rng, 3, 4)
        delta = 0.1 * rng.standard_normal((3, 4))
        batch = TaskBatch.from_samples([s])
        fd = _central_diff(lambda dd: embedding_loss_grad(p, batch, dd[None])[0][0], delta)
        worst = max(worst, _rel(grad_embedding(p, s, delta), fd))
    return worst


@check("suffix_attack_gradient_vs_finite_difference", 1e-5)
def _grad_suffix(ctx: Context) -> float:
    rng = ctx.rng(8)
    worst = 0.0
    for i in range(6):
        s = _task(rng, 3, 5)
        pred = _random_params(rng, 2, 3) if i % 2 else solver.PredictorMatrix(rng.standard_normal((3, 3)))
        delta = 0.1 * rng.standard_normal((3, 2))
        batch = TaskBatch.from_samples([s])
        fd = _central_diff(lambda dd: suffix_loss_grad(pred, batch, dd[None])[0][0], delta)
        worst = max(worst, _rel(grad_suffix(pred, s, delta), fd))
    return worst


@check("embedding_regularizer_gradient_vs_finite_difference", 1e-5)
def _grad_reg(ctx: Context) -> float:
    rng = ctx.rng(9)
    worst = 0.0
    for shape in [(3, 5), (4, 4), (2, 3)]:
        we = rng.standard_normal(shape)
        worst = max(worst, _rel(losses.embedding_reg_grad(we).grad, _central_diff(losses.embedding_reg, we)))
    return worst


@check("pgd_embedding_fraction_of_grid_max", 0.98, higher_is_better=True)
def _pgd_emb(ctx: Context) -> float:
    rng = ctx.rng(10)
    grid = np.linspace(-1, 1, 201)
    worst = 1.0
    for _ in range(4):
        p = _random_params(rng, 1, 1, scale=1.0)
        s = _task(rng, 1, 2, SpdMatrix.identity(1))
        eps = 0.5
        a, b = np.meshgrid(eps * grid, eps * grid, indexing="ij")
        deltas = np.stack([a.ravel(), b.ravel()], axis=1)[:, None, :]
        batch = TaskBatch.from_samples([s] * len(deltas))
        grid_max = float(np.max(embedding_loss_grad(p, batch, deltas)[0]))
        pert = pgd_embedding(p, s, AttackConfig(steps=50, step_size=eps / 10, radius=eps, restarts=1))
        val = float(embedding_loss_grad(p, TaskBatch.from_samples([s]), pert.delta[None])[0][0])
        worst = min(worst, val / grid_max if grid_max > 0 else 1.0)
    return worst


@check("pgd_suffix_fraction_of_grid_max", 0.98, higher_is_better=True)
def _pgd_suffix(ctx: Context) -> float:
    rng = ctx.rng(11)
    grid = np.linspace(-1, 1, 2001)
    worst = 1.0
    for i in range(4):
        s = _task(rng, 1, 3, SpdMatrix.identity(1))
        pred = _random_params(rng, 1, 1, scale=1.0) if i % 2 else solver.PredictorMatrix([[rng.standard_normal()]])
        rho = 0.7
        deltas = (rho * grid)[:, None, None]
        batch = TaskBatch.from_samples([s] * len(deltas))
        grid_max = float(np.max(suffix_loss_grad(pred, batch, deltas)[0]))
        pert = pgd_suffix(pred, s, 1, AttackConfig(steps=50, step_size=rho / 10, radius=rho, restarts=1))
        val = float(suffix_loss_grad(pred, TaskBatch.from_samples([s]), pert.delta[None])[0][0])
        worst = min(worst, val / grid_max if grid_max > 0 else 1.0)
    return worst


# surrogate

@check("adversarial_loss_minus_surrogate_in_stderr", 3.0)
def _upper_bound(ctx: Context) -> float:
    rng = ctx.rng(12)
    worst = -np.inf
    for i in range(3):
        d0, d, n, eps = 3, 3, 6, 0.3
        p = _random_params(rng, d, d0)
        tc = TaskConfig(d0, n, SpdMatrix.random(d0, rng))
        mc = ctx.mc(2000, 12 + i)
        adv, se_adv = losses.mc_adversarial_loss(p, tc, eps, mc, AttackConfig(steps=10, step_size=eps / 10, radius=eps),
                                                 threads=ctx.threads)
        terms = losses.mc_surrogate_terms(p, tc, eps, mc, threads=ctx.threads)
        worst = max(worst, (adv - terms.total) / np.hypot(se_adv, terms.stderr))
    return float(worst)


@check("surrogate_gradient_wrt_w21_vanishes_antithetic", 1e-10)
def _w21_grad(ctx: Context) -> float:
    rng = ctx.rng(13)
    worst = 0.0
    for i in range(3):
        p = _random_params(rng, 3, 4, w21=False)
        tc = TaskConfig(4, 5, SpdMatrix.random(4, rng))
        g_v, g_k = losses.mc_surrogate_w21_grad(p, tc, 0.2, ctx.mc(1000, 20 + i, antithetic=True), ctx.threads)
        worst = max(worst, float(np.max(np.abs(g_v))), float(np.max(np.abs(g_k))))
    return worst


@check("closed_form_surrogate_vs_sampling_zscore", 3.0)
def _closed_form(ctx: Context) -> float:
    rng = ctx.rng(14)
    worst = 0.0
    for i in range(3):
        d0, d, n, eps = 4, 3, 8, 0.2
        p = _random_params(rng, d, d0, w21=False)
        lam = SpdMatrix.random(d0, rng)
        terms = losses.mc_surrogate_terms(p, TaskConfig(d0, n, lam), eps, ctx.mc(10_000, 30 + i), ctx.threads)
        worst = max(worst, abs(terms.total - losses.closed_form_surrogate(p, lam, n, eps)) / terms.stderr)
    return worst


@check("surrogate_minimum_at_factored_optimum", 1e-9)
def _minimum(ctx: Context) -> float:
    rng = ctx.rng(15)
    worst = 0.0
    for _ in range(5):
        we = rng.standard_normal((3, 3)) + 2 * np.eye(3)
        lam = SpdMatrix.random(3, rng)
        p = solver.factor_optimal_params(we, lam, 6, 0.3, v22=1.3)
        worst = max(worst, _rel(losses.closed_form_surrogate(p, lam, 6, 0.3), solver.surrogate_minimum(we, lam, 6, 0.3)))
    return worst


@check("surrogate_minimum_scalar_anchors", 1e-12)
def _anchors(ctx: Context) -> float:
    one = np.eye(1)
    return abs(solver.surrogate_minimum(one, one, 2, 0.0) - 1.0) + abs(solver.surrogate_minimum(one, one, 2, 1.0) - 4 / 3)


@check("surrogate_gradient_vs_finite_difference", 1e-5)
def _surrogate_grad(ctx: Context) -> float:
    rng = ctx.rng(16)
    lam = SpdMatrix.random(3, rng)
    p = _random_params(rng, 3, 3, w21=False)
    n, eps, beta = 5, 0.2, 0.5

    def obj(q):
        return losses.closed_form_surrogate(q, lam, n, eps) + beta * losses.embedding_reg(q.we)

    g = surrogate_grad(p, lam, n, eps, beta=beta, train_we=True)
    fd_k = _central_diff(lambda k: obj(p.replace(kq11=k)), p.kq11)
    fd_w = _central_diff(lambda w: obj(p.replace(we=w)), p.we)
    fd_v = (obj(p.replace(v22=p.v22 + 1e-6)) - obj(p.replace(v22=p.v22 - 1e-6))) / 2e-6
    return max(_rel(g["kq11"], fd_k), _rel(g["we"], fd_w), _rel(g["v22"], fd_v))


@check("surrogate_gradient_zero_at_optimum", 1e-8)
def _grad_opt(ctx: Context) -> float:
    rng = ctx.rng(17)
    we = rng.standard_normal((3, 3)) + 2 * np.eye(3)
    lam = SpdMatrix.random(3, rng)
    p = solver.factor_optimal_params(we, lam, 6, 0.2, v22=1.0)
    g = surrogate_grad(p, lam, 6, 0.2)
    return max(float(np.max(np.abs(g["kq11"]))), abs(g["v22"]))


# trainer

def _trained(ctx: Context):
    if "trained" not in ctx.cache:
        rng = ctx.rng(18)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        we = q * rng.uniform(0.7, 1.4, 3)
        lam = SpdMatrix.random(3, rng, spread=2.0)
        res = train_surrogate(init_params(3, 3, InitSpec(zeta=0.1, we_init=we), lam), lam, 6,
                              TrainConfig(steps=50_000, lr=0.05, eps=0.1, tol=1e-11))
        ctx.cache["trained"] = (we, lam, res)
    return ctx.cache["trained"]


@check("trained_stationarity_residual", 1e-6)
def _train_stat(ctx: Context) -> float:
    _, lam, res = _trained(ctx)
    return check_stationarity(res.params, lam, 6, 0.1)


@check("trained_loss_gap_to_minimum", 1e-6)
def _train_gap(ctx: Context) -> float:
    we, lam, res = _trained(ctx)
    return abs(res.final_loss - solver.surrogate_minimum(we, lam, 6, 0.1))


@check("trained_w21_blocks_max_abs", 0.0)
def _train_w21(ctx: Context) -> float:
    p = _trained(ctx)[2].params
    return float(max(np.max(np.abs(p.kq21)), np.max(np.abs(p.v21))))


@check("trained_loss_max_increase", 1e-12)
def _train_mono(ctx: Context) -> float:
    losses_ = np.array([row[1] for row in _trained(ctx)[2].trajectory])
    return float(max(np.max(np.diff(losses_)), 0.0))


@check("regularized_training_sv_variance_change", 0.0)
def _reg_train(ctx: Context) -> float:
    lam = SpdMatrix.identity(2)
    init = init_params(2, 2, InitSpec(zeta=0.1, we_init=np.diag([3.0, 1.0])), lam)
    res = train_surrogate(init, lam, 4, TrainConfig(steps=2000, lr=0.02, train_we=True, beta=0.5, eps=0.1))
    return losses.embedding_reg(res.params.we) - losses.embedding_reg(init.we)


@check("predictor_norm_change_with_larger_eps", 0.0)
def _shrink(ctx: Context) -> float:
    rng = ctx.rng(19)
    we = rng.standard_normal((3, 3)) + 2 * np.eye(3)
    lam = SpdMatrix.random(3, rng)
    norms = [np.linalg.norm(solver.optimal_predictor_matrix(we, lam, 6, e).b) for e in (0.0, 0.1, 0.3, 1.0)]
    return float(np.max(np.diff(norms)))


# risk and the robust bound

@check("clean_risk_exact_vs_sampling_zscore", 3.0)
def _clean_exact(ctx: Context) -> float:
    cfg = ctx.cfg
    b = solver.optimal_predictor_matrix(cfg.embedding(), cfg.lam(), cfg.n, cfg.eps)
    est = mc_clean_risk(b, cfg.task_config(), ctx.mc(20_000, 40), ctx.threads)
    return abs(est.value - solver.clean_risk_exact(b, cfg.lam(), cfg.n)) / est.stderr


@check("clean_risk_scalar_anchors", 1e-12)
def _clean_anchor(ctx: Context) -> float:
    one = np.eye(1)
    b1 = solver.optimal_predictor_matrix(one, one, 2, 0.0)
    b2 = solver.optimal_predictor_matrix(one, one, 2, 1.0)
    return abs(solver.clean_risk_exact(b1, one, 2) - 0.25) + abs(solver.clean_risk_exact(b2, one, 2) - 5 / 18)


@check("robust_bound_scalar_anchors", 1e-12)
def _bound_anchor(ctx: Context) -> float:
    one = np.eye(1)
    return (abs(solver.robust_bound(one, one, 2, 0.0, 1, 0.0).bound - 1.5)
            + abs(solver.robust_bound(one, one, 2, 1.0, 1, 1.0).bound - 1.25))


@check("robust_risk_over_bound_ratio", 1.0)
def _robust_vs_bound(ctx: Context) -> float:
    cfg = ctx.cfg
    we, lam = cfg.embedding(), cfg.lam()
    b = solver.optimal_predictor_matrix(we, lam, cfg.n, cfg.eps)
    est = mc_robust_risk(b, cfg.task_config(), cfg.m, cfg.rho, ctx.mc(4000, 41), cfg.eval_attack(), ctx.threads)
    return est.value / solver.robust_bound(we, lam, cfg.n, cfg.eps, cfg.m, cfg.rho).bound


@check("robust_minus_clean_per_task_min", 0.0, higher_is_better=True)
def _robust_ge_clean(ctx: Context) -> float:
    cfg = ctx.cfg
    b = solver.optimal_predictor_matrix(cfg.embedding(), cfg.lam(), cfg.n, cfg.eps)
    mc = ctx.mc(2000, 42)
    clean = mc_clean_risk(b, cfg.task_config(), mc, ctx.threads)
    robust = mc_robust_risk(b, cfg.task_config(), cfg.m, cfg.rho, mc, cfg.eval_attack(), ctx.threads)
    return float(np.min(robust.per_task - clean.per_task))


@check("warm_started_rho_path_min_increment", 0.0, higher_is_better=True)
def _rho_path(ctx: Context) -> float:
    cfg = ctx.cfg
    b = solver.optimal_predictor_matrix(cfg.embedding(), cfg.lam(), cfg.n, cfg.eps)
    path = mc_robust_path([(b, r) for r in (0.0, 0.25, 0.5, 1.0)], cfg.task_config(), max(cfg.m, 1),
                          ctx.mc(2000, 43), cfg.attack.eval_steps, ctx.threads)
    return float(min(np.min(hi.per_task - lo.per_task) for lo, hi in zip(path, path[1:])))


@check("inverse_gram_norm_bound_relative_slack_min", -1e-12, higher_is_better=True)
def _inv_bound(ctx: Context) -> float:
    rng = ctx.rng(20)
    worst = np.inf
    for _ in range(50):
        d0 = int(rng.integers(1, 6))
        d = int(rng.integers(1, d0 + 1))
        lhs, rhs = inverse_norm_bound(rng.standard_normal((d, d0)), SpdMatrix.random(d0, rng),
                                      int(rng.integers(1, 20)), float(rng.uniform(0.01, 1.0)))
        worst = min(worst, (rhs - lhs) / rhs)
    return float(worst)


@check("inverse_gram_norm_bound_scalar_equality", 1e-12)
def _inv_anchor(ctx: Context) -> float:
    one = np.eye(1)
    a = inverse_norm_bound(one, one, 2, 0.0)
    b = inverse_norm_bound(one, one, 2, 1.0)
    return abs(a[0] - 0.5) + abs(a[1] - 0.5) + abs(b[0] - 1 / 3) + abs(b[1] - 1 / 3)


@check("thread_count_invariance_max_abs_diff", 0.0)
def _threads(ctx: Context) -> float:
    cfg = ctx.cfg
    b = solver.optimal_predictor_matrix(cfg.embedding(), cfg.lam(), cfg.n, cfg.eps)
    mc = ctx.mc(5000, 44)
    one = mc_robust_risk(b, cfg.task_config(), cfg.m, cfg.rho, mc, cfg.eval_attack(), threads=1)
    three = mc_robust_risk(b, cfg.task_config(), cfg.m, cfg.rho, mc, cfg.eval_attack(), threads=3)
    return float(np.max(np.abs(one.per_task - three.per_task)))


def run_checks(cfg: ExperimentConfig, seed: int = 0, threads: int | None = None) -> list[CheckResult]:
    ctx = Context(cfg=cfg, seed=seed, threads=threads)
    out = []
    for name, threshold, higher, fn in _CHECKS:
        measured = float(fn(ctx))
        passed = measured >= threshold if higher else measured <= threshold
        out.append(CheckResult(name, bool(passed and np.isfinite(measured)), measured, threshold))
    return out


def format_report(results: list[CheckResult]) -> str:
    return "\n".join([",".join(REPORT_COLUMNS)] + [r.line() for r in results]) + "\n"
