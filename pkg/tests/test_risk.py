import numpy as np
import pytest

from helpers import random_params
from iclcat.attacks import AttackConfig
from iclcat.mathcore import SpdMatrix
from iclcat.montecarlo import McConfig, map_tasks
from iclcat.risk import RISK_COLUMNS, mc_clean_risk, mc_robust_path, mc_robust_risk
from iclcat.solver import (
    PredictorMatrix,
    clean_risk_exact,
    factor_optimal_params,
    lsae_predictor_matrix,
    optimal_predictor_matrix,
    robust_bound,
)
from iclcat.tasks import TaskConfig

ONE = np.eye(1)
S1 = TaskConfig(1, 2, ONE)


def test_clean_risk_scalar_optimum():
    est = mc_clean_risk(optimal_predictor_matrix(ONE, ONE, 2, 0.0), S1, McConfig(100_000, seed=2))
    assert abs(est.value - 0.25) <= 3 * est.stderr
    assert est.num_tasks == 100_000 and est.stderr == pytest.approx(np.std(est.per_task, ddof=1) / np.sqrt(100_000))


def test_clean_risk_zero_predictor():
    lam = SpdMatrix.diagonal([2.0, 1.0])
    est = mc_clean_risk(PredictorMatrix(np.zeros((2, 2))), TaskConfig(2, 3, lam), McConfig(50_000, seed=3))
    assert abs(est.value - 1.5) <= 3 * est.stderr


def test_parameter_and_matrix_paths_agree():
    rng = np.random.default_rng(0)
    we = rng.standard_normal((3, 3)) + 2 * np.eye(3)
    lam = SpdMatrix.random(3, rng)
    p = factor_optimal_params(we, lam, 5, 0.2, v22=0.8)
    tc = TaskConfig(3, 5, lam)
    mc = McConfig(3000, seed=1)
    a = mc_clean_risk(p, tc, mc).per_task
    b = mc_clean_risk(lsae_predictor_matrix(p), tc, mc).per_task
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        mc_clean_risk(PredictorMatrix(np.eye(2)), S1, McConfig(10))


def test_zero_radius_or_suffix_equals_clean():
    b = optimal_predictor_matrix(np.eye(2), np.eye(2), 4, 0.1)
    tc = TaskConfig(2, 4, np.eye(2))
    mc = McConfig(2000, seed=4)
    clean = mc_clean_risk(b, tc, mc)
    np.testing.assert_array_equal(mc_robust_risk(b, tc, 2, 0.0, mc).per_task, clean.per_task)
    np.testing.assert_array_equal(mc_robust_risk(b, tc, 0, 1.0, mc).per_task, clean.per_task)


def test_robust_at_least_clean_per_task():
    rng = np.random.default_rng(5)
    p = random_params(rng, 2, 2)
    tc = TaskConfig(2, 4, np.eye(2))
    mc = McConfig(1000, seed=6)
    robust = mc_robust_risk(p, tc, 2, 0.5, mc)
    assert np.all(robust.per_task >= mc_clean_risk(p, tc, mc).per_task)
    assert robust.attack == AttackConfig.for_radius(0.5)


def test_robust_scalar_below_bound():
    b = optimal_predictor_matrix(ONE, ONE, 2, 0.0)
    est = mc_robust_risk(b, S1, 1, 0.5, McConfig(10_000, seed=7), AttackConfig.for_radius(0.5, 20))
    assert est.value <= robust_bound(ONE, ONE, 2, 0.0, 1, 0.5).bound


def test_scalar_suffix_attack_reaches_exact_maximum():
    # the B-predictor is linear in the suffix shift, so the inner max has a closed form
    b = optimal_predictor_matrix(ONE, ONE, 2, 0.0)
    mc = McConfig(2000, seed=8)
    est = mc_robust_risk(b, S1, 1, 0.5, mc, AttackConfig(steps=50, step_size=0.05, radius=0.5))
    def exact(batch):
        a = 0.5 * np.einsum("sn,sdn->s", batch.y, batch.x) * batch.xq[:, 0] * b.b[0, 0]
        shift = 0.5 * 0.5 * np.abs(b.b[0, 0] * batch.xq[:, 0] * batch.y[:, -1])
        return 0.5 * (np.abs(a - batch.yq) + shift) ** 2

    truth = np.concatenate(map_tasks(exact, S1, mc))
    np.testing.assert_allclose(est.per_task, truth, rtol=1e-9, atol=1e-12)


def test_validation():
    b = optimal_predictor_matrix(ONE, ONE, 2, 0.0)
    with pytest.raises(ValueError):
        mc_robust_risk(b, S1, 3, 0.5, McConfig(10))
    with pytest.raises(ValueError):
        mc_robust_risk(b, S1, 1, 0.5, McConfig(10), AttackConfig(radius=0.4))


def test_warm_started_path_monotone_per_task():
    b = optimal_predictor_matrix(np.eye(2), np.eye(2), 6, 0.1)
    tc = TaskConfig(2, 6, np.eye(2))
    path = mc_robust_path([(b, r) for r in (0.0, 0.3, 0.6, 1.0)], tc, 3, McConfig(3000, seed=9))
    for lo, hi in zip(path, path[1:]):
        assert np.all(hi.per_task >= lo.per_task)
    assert [e.rho for e in path] == [0.0, 0.3, 0.6, 1.0]


def test_thread_invariance():
    b = optimal_predictor_matrix(np.eye(2), np.eye(2), 6, 0.1)
    tc = TaskConfig(2, 6, np.eye(2))
    mc = McConfig(6500, seed=1)
    runs = [mc_robust_risk(b, tc, 2, 0.5, mc, threads=t) for t in (1, 2, 4)]
    for r in runs[1:]:
        np.testing.assert_array_equal(r.per_task, runs[0].per_task)
        assert r.value == runs[0].value


def test_csv_values_layout():
    b = optimal_predictor_matrix(ONE, ONE, 2, 0.0)
    est = mc_robust_risk(b, S1, 1, 0.5, McConfig(100))
    assert len(est.csv_values()) == len(RISK_COLUMNS)
    assert clean_risk_exact(b, ONE, 2) == pytest.approx(0.25)
