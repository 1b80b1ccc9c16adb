"""Linear self-attention with a trainable linear embedding (block parameters,
forward pass and the query prediction under clean / perturbed inputs)."""

from __future__ import annotations

import io
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .tasks import IclInput, TaskSample, assemble_icl_input

BLOCKS = ("we", "kq11", "kq12", "kq21", "kq22", "v11", "v12", "v21", "v22")


@dataclass(frozen=True)
class LsaeParams:
    """Parameters stored block-wise.

    ``we`` is d x d0; ``kq11``/``v11`` are d x d; the ``*12``/``*21`` blocks
    are d-vectors and ``kq22``/``v22`` scalars.
    """

    we: np.ndarray
    kq11: np.ndarray
    kq12: np.ndarray
    kq21: np.ndarray
    kq22: float
    v11: np.ndarray
    v12: np.ndarray
    v21: np.ndarray
    v22: float

    def __post_init__(self):
        we = np.array(self.we, dtype=float)
        if we.ndim != 2:
            raise ValueError("we must be a d x d0 matrix")
        d = we.shape[0]
        shapes = {"kq11": (d, d), "v11": (d, d), "kq12": (d,), "kq21": (d,), "v12": (d,), "v21": (d,)}
        object.__setattr__(self, "we", we)
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.size != int(np.prod(shape)):
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr.reshape(shape))
        object.__setattr__(self, "kq22", float(self.kq22))
        object.__setattr__(self, "v22", float(self.v22))

    @property
    def d(self) -> int:
        return self.we.shape[0]

    @property
    def d0(self) -> int:
        return self.we.shape[1]

    @classmethod
    def zeros(cls, d: int, d0: int) -> "LsaeParams":
        return cls(
            we=np.zeros((d, d0)), kq11=np.zeros((d, d)), kq12=np.zeros(d), kq21=np.zeros(d), kq22=0.0,
            v11=np.zeros((d, d)), v12=np.zeros(d), v21=np.zeros(d), v22=0.0,
        )

    def replace(self, **changes) -> "LsaeParams":
        return replace(self, **changes)

    def full_kq(self) -> np.ndarray:
        return _assemble(self.kq11, self.kq12, self.kq21, self.kq22)

    def full_v(self) -> np.ndarray:
        return _assemble(self.v11, self.v12, self.v21, self.v22)

    def w21_is_zero(self) -> bool:
        return not np.any(self.kq21) and not np.any(self.v21)

    def batch_predict(self, x, y, xq, need_grad: bool = False):
        """Batched query prediction for contexts ``x`` (S, d0, N).

        Returns ``yhat`` (S,) and, with ``need_grad``, ``d yhat / d x`` (S, d0, N).
        """
        p = np.einsum("ij,sjn->sin", self.we, x)
        z = xq @ self.we.T
        yhat, dp = _embedded_prediction(self, p, y, z, need_grad)
        if not need_grad:
            return yhat
        return yhat, np.einsum("ji,sjn->sin", self.we, dp)

    def equals(self, other: "LsaeParams") -> bool:
        return all(np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))


def _assemble(b11, b12, b21, b22) -> np.ndarray:
    d = b11.shape[0]
    out = np.empty((d + 1, d + 1))
    out[:d, :d] = b11
    out[:d, d] = b12
    out[d, :d] = b21
    out[d, d] = b22
    return out


def _embedded_prediction(p: LsaeParams, emb, y, z, need_grad: bool):
    """Query prediction from embedded context ``emb`` (S, d, N), labels (S, N) and
    embedded query ``z`` (S, d); optional gradient with respect to ``emb``."""
    n = emb.shape[2]
    ka = z @ p.kq11.T
    kb = z @ p.kq21
    s_u = np.einsum("d,sdn->sn", p.v21, emb) + p.v22 * y
    s_k = np.einsum("sdn,sd->sn", emb, ka) + y * kb[:, None]
    qterm = (z @ p.v21) * np.einsum("sd,sd->s", z, ka)
    yhat = (np.sum(s_u * s_k, axis=1) + qterm) / n
    if not need_grad:
        return yhat, None
    grad = (p.v21[None, :, None] * s_k[:, None, :] + ka[:, :, None] * s_u[:, None, :]) / n
    return yhat, grad


def embedding_batch_predict(p: LsaeParams, x, y, xq, delta=None, need_grad: bool = False):
    """Batched prediction with the context embeddings shifted by ``delta`` (S, d, N)."""
    emb = np.einsum("ij,sjn->sin", p.we, x)
    if delta is not None:
        emb = emb + delta
    z = xq @ p.we.T
    yhat, grad = _embedded_prediction(p, emb, y, z, need_grad)
    return (yhat, grad) if need_grad else yhat


@dataclass(frozen=True)
class EmbeddedInput:
    e: np.ndarray


EMBEDDING = "embedding"
INPUT_SUFFIX = "input-suffix"


@dataclass(frozen=True)
class Perturbation:
    """Column-bounded perturbation: d x N in embedding space or d0 x M on the input suffix."""

    delta: np.ndarray
    radius: float
    space: str

    def __post_init__(self):
        delta = np.array(self.delta, dtype=float)
        if delta.ndim != 2:
            raise ValueError("perturbation must be a matrix")
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        if self.space not in (EMBEDDING, INPUT_SUFFIX):
            raise ValueError(f"unknown perturbation space {self.space!r}")
        if delta.size and np.max(np.linalg.norm(delta, axis=0)) > self.radius * (1 + 1e-9):
            raise ValueError("perturbation column exceeds the radius")
        object.__setattr__(self, "delta", delta)

    @property
    def m(self) -> int:
        return self.delta.shape[1]


def _check_dims(p: LsaeParams, d0: int):
    if p.d0 != d0:
        raise ValueError(f"input dimension {d0} does not match embedding width {p.d0}")


def embed(p: LsaeParams, z: IclInput) -> EmbeddedInput:
    _check_dims(p, z.d0)
    e = np.vstack([p.we @ z.z[:-1, :], z.z[-1:, :]])
    return EmbeddedInput(e)


def forward_full(p: LsaeParams, z: IclInput) -> np.ndarray:
    """``E + W^V E (E^T W^KQ E) / N`` with full (d+1) x (d+1) matrices."""
    e = embed(p, z).e
    return e + p.full_v() @ e @ (e.T @ p.full_kq() @ e) / z.n


def _bilinear_prediction(p: LsaeParams, e: np.ndarray, xq: np.ndarray) -> float:
    n = e.shape[1] - 1
    row = np.append(p.v21, p.v22)
    kq_cols = np.vstack([p.kq11, p.kq21[None, :]])
    return float(row @ (e @ e.T / n) @ kq_cols @ (p.we @ xq))


def predict(p: LsaeParams, s: TaskSample) -> float:
    """Bottom-right entry of the forward pass via its block-simplified bilinear form."""
    _check_dims(p, s.d0)
    e = embed(p, assemble_icl_input(s)).e
    return _bilinear_prediction(p, e, s.xq)


def predict_adv_embedding(p: LsaeParams, s: TaskSample, d: Perturbation) -> float:
    _check_dims(p, s.d0)
    if d.delta.shape != (p.d, s.n):
        raise ValueError(f"embedding perturbation must be {p.d}x{s.n}, got {d.delta.shape}")
    e = embed(p, assemble_icl_input(s)).e.copy()
    e[: p.d, : s.n] += d.delta
    return _bilinear_prediction(p, e, s.xq)


def perturb_suffix(x: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Shift the last ``M`` context columns of ``x`` (d0 x N or S x d0 x N) by ``delta``."""
    m = delta.shape[-1]
    if m > x.shape[-1]:
        raise ValueError(f"suffix length {m} exceeds context length {x.shape[-1]}")
    out = np.array(x, dtype=float, copy=True)
    if m:
        out[..., x.shape[-1] - m :] += delta
    return out


def predict_suffix_perturbed(p: LsaeParams, s: TaskSample, d: Perturbation) -> float:
    _check_dims(p, s.d0)
    if d.delta.shape[0] != s.d0:
        raise ValueError("suffix perturbation must have d0 rows")
    xs = perturb_suffix(s.x, d.delta)
    return predict(p, TaskSample(w=s.w, x=xs, y=s.y, xq=s.xq, yq=s.yq))


# -- serialization ----------------------------------------------------------

def _fmt(v: float) -> str:
    return "%.17g" % v


def params_to_csv(p: LsaeParams) -> str:
    buf = io.StringIO()
    buf.write("block,rows,cols\n")
    for name in BLOCKS:
        arr = np.atleast_1d(np.asarray(getattr(p, name), dtype=float))
        mat = arr if arr.ndim == 2 else arr.reshape(-1, 1)
        buf.write(f"{name},{mat.shape[0]},{mat.shape[1]}\n")
        for row in mat:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def params_from_csv(text: str) -> LsaeParams:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].strip() != "block,rows,cols":
        raise ValueError("missing 'block,rows,cols' header")
    i, blocks = 1, {}
    while i < len(lines):
        name, rows, cols = lines[i].split(",")
        rows, cols = int(rows), int(cols)
        data = np.array([[float(v) for v in lines[i + 1 + r].split(",")] for r in range(rows)]).reshape(rows, cols)
        blocks[name] = data
        i += rows + 1
    missing = set(BLOCKS) - set(blocks)
    if missing:
        raise ValueError(f"missing parameter blocks: {sorted(missing)}")
    return LsaeParams(
        we=blocks["we"], kq11=blocks["kq11"], kq12=blocks["kq12"].ravel(), kq21=blocks["kq21"].ravel(),
        kq22=blocks["kq22"].item(), v11=blocks["v11"], v12=blocks["v12"].ravel(), v21=blocks["v21"].ravel(),
        v22=blocks["v22"].item(),
    )


def save_params(p: LsaeParams, path) -> None:
    Path(path).write_text(params_to_csv(p), encoding="utf-8", newline="\n")


def load_params(path) -> LsaeParams:
    return params_from_csv(Path(path).read_text(encoding="utf-8"))
