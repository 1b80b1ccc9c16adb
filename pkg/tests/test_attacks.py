import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import central_diff, random_params, random_spd, rel_err, scalar_params, scalar_task, seeds
from iclcat.attacks import (
    AttackConfig,
    embedding_attack,
    embedding_loss_grad,
    grad_embedding,
    grad_suffix,
    pgd_embedding,
    pgd_suffix,
    project_columns,
    suffix_attack,
    suffix_loss_grad,
)
from iclcat.model import EMBEDDING, INPUT_SUFFIX, Perturbation, predict, predict_adv_embedding
from iclcat.solver import PredictorMatrix
from iclcat.tasks import TaskBatch, TaskConfig, TaskSample, sample_batch, sample_task


def test_attack_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(steps=0)
    with pytest.raises(ValueError):
        AttackConfig(step_size=0.0)
    cfg = AttackConfig.for_radius(0.5)
    assert cfg.steps == 20 and cfg.step_size == pytest.approx(0.05)


def test_projection_examples():
    np.testing.assert_allclose(project_columns([[3.0], [4.0]], 1.0), [[0.6], [0.8]])
    np.testing.assert_array_equal(project_columns([[0.3], [0.4]], 1.0), [[0.3], [0.4]])
    np.testing.assert_array_equal(project_columns([[3.0], [4.0]], 0.0), [[0.0], [0.0]])
    with pytest.raises(ValueError):
        project_columns([[1.0]], -1.0)


@given(seeds, st.floats(0.01, 3.0))
def test_projection_feasible_and_idempotent(seed, radius):
    delta = np.random.default_rng(seed).standard_normal((3, 5))
    p = project_columns(delta, radius)
    assert np.all(np.linalg.norm(p, axis=0) <= radius * (1 + 1e-12))
    np.testing.assert_allclose(project_columns(p, radius), p, rtol=1e-15, atol=0)


def _one(s):
    return TaskBatch.from_samples([s])


def test_embedding_gradient_scalar_case():
    p, s = scalar_params(), scalar_task()
    g = grad_embedding(p, s, np.zeros((1, 2)))
    # yhat = 0.5 * (2 (1 + d1) - 2 (-1 + d2)) * 0.5 * 3, so d yhat / d delta = (1.5, -1.5)
    np.testing.assert_allclose(g, (3.0 - 6.0) * np.array([[1.5, -1.5]]))


def test_embedding_gradient_zero_at_matched_prediction():
    p, s = scalar_params(), scalar_task()
    # shift the target so the clean prediction is exact
    matched = TaskSample(w=s.w, x=s.x, y=s.y, xq=s.xq, yq=predict(p, s))
    np.testing.assert_array_equal(grad_embedding(p, matched, np.zeros((1, 2))), np.zeros((1, 2)))


@given(seeds)
def test_embedding_gradient_finite_difference(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 3, 3)
    s = sample_task(TaskConfig(3, 5, random_spd(rng, 3)), rng)
    delta = 0.1 * rng.standard_normal((3, 5))
    fd = central_diff(lambda d: embedding_loss_grad(p, _one(s), d[None])[0][0], delta)
    assert rel_err(grad_embedding(p, s, delta), fd) <= 1e-5


def test_embedding_gradient_dimension_errors():
    p, s = scalar_params(), scalar_task()
    with pytest.raises(ValueError):
        grad_embedding(p, s, np.zeros((2, 2)))


def test_suffix_gradient_scalar_case():
    p, s = scalar_params(), scalar_task()
    # yhat = 0.5 * (2 * 1 - 2 * (-1 + d)) * 1.5, so d yhat / d delta = -1.5
    np.testing.assert_allclose(grad_suffix(p, s, np.zeros((1, 1))), [[(3.0 - 6.0) * -1.5]])


def test_suffix_gradient_zero_at_matched_prediction():
    p, s = scalar_params(), scalar_task()
    matched = TaskSample(w=s.w, x=s.x, y=s.y, xq=s.xq, yq=predict(p, s))
    np.testing.assert_array_equal(grad_suffix(p, matched, np.zeros((1, 1))), [[0.0]])


@given(seeds, st.booleans())
def test_suffix_gradient_finite_difference(seed, matrix_predictor):
    rng = np.random.default_rng(seed)
    s = sample_task(TaskConfig(3, 5, random_spd(rng, 3)), rng)
    pred = PredictorMatrix(rng.standard_normal((3, 3))) if matrix_predictor else random_params(rng, 2, 3)
    delta = 0.1 * rng.standard_normal((3, 2))
    fd = central_diff(lambda d: suffix_loss_grad(pred, _one(s), d[None])[0][0], delta)
    assert rel_err(grad_suffix(pred, s, delta), fd) <= 1e-5


def test_suffix_gradient_errors():
    p, s = scalar_params(), scalar_task()
    with pytest.raises(ValueError):
        grad_suffix(p, s, np.zeros((1, 3)))
    with pytest.raises(ValueError):
        grad_suffix(p, s, np.zeros((2, 1)))


def test_pgd_zero_radius():
    p, s = scalar_params(), scalar_task()
    pert = pgd_embedding(p, s, AttackConfig(radius=0.0))
    np.testing.assert_array_equal(pert.delta, 0.0)
    assert pert.space == EMBEDDING
    pert = pgd_suffix(p, s, 1, AttackConfig(radius=0.0))
    np.testing.assert_array_equal(pert.delta, 0.0)
    assert pert.space == INPUT_SUFFIX


def test_pgd_suffix_empty():
    p, s = scalar_params(), scalar_task()
    pert = pgd_suffix(p, s, 0, AttackConfig(radius=1.0))
    assert pert.delta.shape == (1, 0)
    with pytest.raises(ValueError):
        pgd_suffix(p, s, 3, AttackConfig(radius=1.0))


def test_pgd_embedding_near_grid_max_scalar():
    p, s = scalar_params(), scalar_task()
    eps = 0.2
    grid = np.linspace(-eps, eps, 401)
    a, b = np.meshgrid(grid, grid, indexing="ij")
    deltas = np.stack([a.ravel(), b.ravel()], axis=1)[:, None, :]
    best = np.max(embedding_loss_grad(p, TaskBatch.from_samples([s] * len(deltas)), deltas)[0])
    pert = pgd_embedding(p, s, AttackConfig(steps=50, step_size=eps / 10, radius=eps))
    val = 0.5 * (predict_adv_embedding(p, s, pert) - s.yq) ** 2
    assert val >= 0.98 * best


@given(seeds)
def test_pgd_ascent_and_feasibility(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 3, 3)
    b = sample_batch(TaskConfig(3, 4, np.eye(3)), 20, rng)
    cfg = AttackConfig(steps=10, step_size=0.05, radius=0.3)
    delta, adv, clean = embedding_attack(p, b, cfg)
    assert np.all(adv >= clean)
    assert np.all(np.linalg.norm(delta, axis=1) <= 0.3 * (1 + 1e-9))
    delta, adv, clean = suffix_attack(p, b, 2, cfg)
    assert np.all(adv >= clean)
    assert np.all(np.linalg.norm(delta, axis=1) <= 0.3 * (1 + 1e-9))


def test_pgd_warm_start_never_worse_than_start():
    rng = np.random.default_rng(4)
    b = sample_batch(TaskConfig(2, 4, np.eye(2)), 30, rng)
    pred = PredictorMatrix(np.eye(2))
    cfg = AttackConfig(steps=5, step_size=0.1, radius=1.0)
    init = project_columns(rng.standard_normal((30, 2, 2)), 1.0)
    start, _ = suffix_loss_grad(pred, b, init)
    _, adv, _ = suffix_attack(pred, b, 2, cfg, init=init)
    assert np.all(adv >= start)


def test_single_and_batched_attacks_agree():
    rng = np.random.default_rng(8)
    p = random_params(rng, 2, 2)
    s = sample_task(TaskConfig(2, 3, np.eye(2)), rng)
    cfg = AttackConfig(steps=10, step_size=0.02, radius=0.1)
    single = pgd_embedding(p, s, cfg).delta
    batched, _, _ = embedding_attack(p, TaskBatch.from_samples([s, s]), cfg)
    np.testing.assert_array_equal(single, batched[1])


@given(seeds)
def test_restarts_never_lower_the_attack(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 1, 1, scale=1.0)
    b = sample_batch(TaskConfig(1, 2, np.eye(1)), 30, rng)
    cfg = AttackConfig(steps=20, step_size=0.05, radius=0.5)
    _, single, _ = embedding_attack(p, b, cfg)
    delta, multi, _ = embedding_attack(p, b, AttackConfig(steps=20, step_size=0.05, radius=0.5, restarts=2))
    assert np.all(multi >= single)
    assert np.all(np.linalg.norm(delta, axis=1) <= 0.5 * (1 + 1e-9))


def test_restart_escapes_antipodal_local_max():
    # one instance where ascent from zero settles on the wrong sign pattern
    rng = np.random.default_rng(104)
    p = random_params(rng, 1, 1, scale=1.0)
    s = sample_task(TaskConfig(1, 2, np.eye(1)), rng)
    eps = float(rng.uniform(0.1, 1.0))
    grid = np.linspace(-eps, eps, 401)
    a, c = np.meshgrid(grid, grid, indexing="ij")
    deltas = np.stack([a.ravel(), c.ravel()], axis=1)[:, None, :]
    best = np.max(embedding_loss_grad(p, TaskBatch.from_samples([s] * len(deltas)), deltas)[0])

    def frac(restarts):
        pert = pgd_embedding(p, s, AttackConfig(steps=50, step_size=eps / 10, radius=eps, restarts=restarts))
        return embedding_loss_grad(p, _one(s), pert.delta[None])[0][0] / best

    assert frac(0) < 0.9
    assert frac(1) >= 0.98


def test_restarts_validated():
    with pytest.raises(ValueError):
        AttackConfig(restarts=-1)
