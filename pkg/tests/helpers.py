"""Shared builders and finite-difference utilities for the test suite."""

import numpy as np
from hypothesis import strategies as st

from iclcat.mathcore import SpdMatrix
from iclcat.model import LsaeParams
from iclcat.tasks import TaskSample

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_params(rng, d, d0, w21=True, scale=0.5):
    def g(*shape):
        return scale * rng.standard_normal(shape)
    z = np.zeros(d)
    return LsaeParams(
        we=np.eye(d, d0) + 0.5 * g(d, d0), kq11=g(d, d), kq12=g(d), kq21=g(d) if w21 else z,
        kq22=float(g()), v11=g(d, d), v12=g(d), v21=g(d) if w21 else z, v22=float(1 + g()),
    )


def scalar_params(kq11=0.5, v22=1.0):
    z = np.zeros(1)
    return LsaeParams(we=np.eye(1), kq11=[[kq11]], kq12=z, kq21=z, kq22=0.0,
                      v11=np.zeros((1, 1)), v12=z, v21=z, v22=v22)


def scalar_task():
    # X = [1, -1], w = 2, xq = 3
    return TaskSample.from_weight(np.array([2.0]), np.array([[1.0, -1.0]]), np.array([3.0]))


def random_spd(rng, dim, spread=3.0):
    return SpdMatrix.random(dim, rng, spread)


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        out[idx] = (f(xp) - f(xm)) / (2 * h)
    return out


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def well_conditioned(rng, d, lo=0.7, hi=1.4):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return q * rng.uniform(lo, hi, d)
