"""Sampling of in-context linear-regression tasks and the stacked ICL input."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import SpdMatrix, as_spd, gamma_matrix


@dataclass(frozen=True)
class TaskConfig:
    d0: int
    n: int
    lam: SpdMatrix

    def __post_init__(self):
        object.__setattr__(self, "lam", as_spd(self.lam))
        if self.d0 < 1 or self.n < 1:
            raise ValueError(f"need d0 >= 1 and n >= 1, got d0={self.d0}, n={self.n}")
        if self.lam.dim != self.d0:
            raise ValueError(f"covariance is {self.lam.dim}x{self.lam.dim}, expected d0={self.d0}")


@dataclass(frozen=True)
class TaskSample:
    """One regression task: weight ``w``, context ``x`` (d0 x N), labels ``y`` (N,), query."""

    w: np.ndarray
    x: np.ndarray
    y: np.ndarray
    xq: np.ndarray
    yq: float

    @property
    def d0(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_weight(cls, w, x, xq) -> "TaskSample":
        w = np.asarray(w, dtype=float)
        x = np.asarray(x, dtype=float)
        xq = np.asarray(xq, dtype=float)
        return cls(w=w, x=x, y=w @ x, xq=xq, yq=float(w @ xq))


@dataclass(frozen=True)
class TaskBatch:
    """``S`` tasks stacked along a leading axis.

    Shapes: w (S, d0), x (S, d0, N), y (S, N), xq (S, d0), yq (S,).
    """

    w: np.ndarray
    x: np.ndarray
    y: np.ndarray
    xq: np.ndarray
    yq: np.ndarray

    def __len__(self) -> int:
        return self.w.shape[0]

    @property
    def d0(self) -> int:
        return self.x.shape[1]

    @property
    def n(self) -> int:
        return self.x.shape[2]

    def task(self, i: int) -> TaskSample:
        return TaskSample(w=self.w[i], x=self.x[i], y=self.y[i], xq=self.xq[i], yq=float(self.yq[i]))

    @classmethod
    def from_samples(cls, samples) -> "TaskBatch":
        samples = list(samples)
        return cls(
            w=np.stack([s.w for s in samples]),
            x=np.stack([s.x for s in samples]),
            y=np.stack([np.asarray(s.y, dtype=float).reshape(-1) for s in samples]),
            xq=np.stack([s.xq for s in samples]),
            yq=np.array([s.yq for s in samples], dtype=float),
        )


@dataclass(frozen=True)
class IclInput:
    z: np.ndarray

    @property
    def d0(self) -> int:
        return self.z.shape[0] - 1

    @property
    def n(self) -> int:
        return self.z.shape[1] - 1

    def context(self) -> np.ndarray:
        return self.z[:-1, :-1]

    def labels(self) -> np.ndarray:
        return self.z[-1, :-1]

    def query(self) -> np.ndarray:
        return self.z[:-1, -1]


def gamma_n(lam, n: int) -> SpdMatrix:
    """``((N+1)/N) Lambda + (Tr(Lambda)/N) I``."""
    return SpdMatrix(gamma_matrix(as_spd(lam), n))


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """Independent stream keyed by ``(seed, chunk)``; the same key always gives the same draws."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chunk),))))


def sample_task(cfg: TaskConfig, rng) -> TaskSample:
    rng = make_rng(rng)
    f = cfg.lam.sampling_factor()
    w = rng.standard_normal(cfg.d0)
    pts = f @ rng.standard_normal((cfg.d0, cfg.n + 1))
    return TaskSample.from_weight(w, pts[:, :-1], pts[:, -1])


def sample_batch(cfg: TaskConfig, size: int, rng, antithetic: bool = False) -> TaskBatch:
    """Draw ``size`` tasks. With ``antithetic`` the tasks come in adjacent
    ``(w, -w)`` pairs sharing the same inputs; labels of the second member are
    the exact negation of the first."""
    rng = make_rng(rng)
    if antithetic:
        if size % 2:
            raise ValueError("antithetic sampling needs an even batch size")
        half = sample_batch(cfg, size // 2, rng)
        rep = lambda a: np.repeat(a, 2, axis=0)  # noqa: E731
        sign = np.tile([1.0, -1.0], size // 2)
        return TaskBatch(
            w=rep(half.w) * sign[:, None],
            x=rep(half.x),
            y=rep(half.y) * sign[:, None],
            xq=rep(half.xq),
            yq=rep(half.yq) * sign,
        )
    f = cfg.lam.sampling_factor()
    w = rng.standard_normal((size, cfg.d0))
    pts = np.einsum("ij,sjk->sik", f, rng.standard_normal((size, cfg.d0, cfg.n + 1)))
    x = np.ascontiguousarray(pts[:, :, :-1])
    xq = np.ascontiguousarray(pts[:, :, -1])
    y = np.einsum("si,sin->sn", w, x)
    yq = np.einsum("si,si->s", w, xq)
    return TaskBatch(w=w, x=x, y=y, xq=xq, yq=yq)


def assemble_icl_input(s: TaskSample) -> IclInput:
    d0, n = s.x.shape
    z = np.zeros((d0 + 1, n + 1))
    z[:d0, :n] = s.x
    z[d0, :n] = s.y
    z[:d0, n] = s.xq
    return IclInput(z)
