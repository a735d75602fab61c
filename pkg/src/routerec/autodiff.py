"""Reverse-mode automatic differentiation over numpy arrays.

Every operation accepts either graph nodes (``Value``) or plain ndarrays.
When no input is a ``Value`` the op returns a bare ndarray, so the same
model code runs in recording mode for training and in plain-numpy mode for
inference, where the tape overhead would dominate.

All computation is float64.  A non-finite result from any recorded op raises
``NumericError`` instead of propagating NaN/Inf.
"""

from __future__ import annotations

import json
import math

import numpy as np

INIT_SCALE = 0.08


class NumericError(ArithmeticError):
    """A computation produced NaN/Inf, or gradients are unusable."""


class Value:
    """A node in the computation graph: float64 data plus adjoint."""

    __slots__ = ("data", "grad", "_parents", "_bw")

    def __init__(self, data, parents=()):
        if type(data) is not np.ndarray or data.dtype != np.float64:
            data = np.asarray(data, dtype=np.float64)
        # a single reduction: any NaN/Inf entry makes the sum non-finite
        if not math.isfinite(float(data.sum())):
            raise NumericError("non-finite value in computation")
        self.data = data
        self.grad = None
        self._parents = parents
        self._bw = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Value(shape={self.data.shape})"


class Param(Value):
    """A named leaf with a persistent gradient accumulator."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Param({self.name}, shape={self.data.shape})"


def _val(x):
    return x.data if isinstance(x, Value) else x


def _parents(*xs):
    return tuple(x for x in xs if isinstance(x, Value))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules)
# ---------------------------------------------------------------------------

def add(a, b):
    out_data = _val(a) + _val(b)
    if not _parents(a, b):
        return out_data
    out = Value(out_data, _parents(a, b))

    def _bw(g):
        if isinstance(a, Value):
            a.grad += _unbroadcast(g, a.data.shape)
        if isinstance(b, Value):
            b.grad += _unbroadcast(g, b.data.shape)
    out._bw = _bw
    return out


def sub(a, b):
    out_data = _val(a) - _val(b)
    if not _parents(a, b):
        return out_data
    out = Value(out_data, _parents(a, b))

    def _bw(g):
        if isinstance(a, Value):
            a.grad += _unbroadcast(g, a.data.shape)
        if isinstance(b, Value):
            b.grad -= _unbroadcast(g, b.data.shape)
    out._bw = _bw
    return out


def mul(a, b):
    ad, bd = _val(a), _val(b)
    out_data = ad * bd
    if not _parents(a, b):
        return out_data
    out = Value(out_data, _parents(a, b))

    def _bw(g):
        if isinstance(a, Value):
            a.grad += _unbroadcast(g * bd, a.data.shape)
        if isinstance(b, Value):
            b.grad += _unbroadcast(g * ad, b.data.shape)
    out._bw = _bw
    return out


def div(a, b):
    ad, bd = _val(a), _val(b)
    out_data = ad / bd
    if not _parents(a, b):
        return out_data
    out = Value(out_data, _parents(a, b))

    def _bw(g):
        if isinstance(a, Value):
            a.grad += _unbroadcast(g / bd, a.data.shape)
        if isinstance(b, Value):
            b.grad += _unbroadcast(-g * ad / (bd * bd), b.data.shape)
    out._bw = _bw
    return out


def neg(a):
    return sub(0.0, a)


def maximum(a, floor: float):
    """Elementwise max with a constant floor; gradient passes where a >= floor."""
    ad = _val(a)
    out_data = np.maximum(ad, floor)
    if not isinstance(a, Value):
        return out_data
    out = Value(out_data, (a,))
    mask = ad >= floor

    def _bw(g):
        a.grad += g * mask
    out._bw = _bw
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    ad, bd = _val(a), _val(b)
    out_data = ad @ bd
    if not _parents(a, b):
        return out_data
    out = Value(out_data, _parents(a, b))

    def _bw(g):
        if isinstance(a, Value):
            if ad.ndim == 2 and bd.ndim == 2:
                a.grad += g @ bd.T
            elif ad.ndim == 2 and bd.ndim == 1:
                a.grad += np.outer(g, bd)
            else:  # 1D @ 2D
                a.grad += bd @ g
        if isinstance(b, Value):
            if ad.ndim == 2 and bd.ndim == 2:
                b.grad += ad.T @ g
            elif ad.ndim == 2 and bd.ndim == 1:
                b.grad += ad.T @ g
            else:
                b.grad += np.outer(ad, g)
    out._bw = _bw
    return out


def dot(a, b):
    ad, bd = _val(a), _val(b)
    out_data = np.dot(ad, bd)
    if not _parents(a, b):
        return out_data
    out = Value(out_data, _parents(a, b))

    def _bw(g):
        if isinstance(a, Value):
            a.grad += g * bd
        if isinstance(b, Value):
            b.grad += g * ad
    out._bw = _bw
    return out


def dense(weight, x):
    """weight @ x: the basic affine-map building block (bias added separately)."""
    return matmul(weight, x)


def transpose(a):
    ad = _val(a)
    if not isinstance(a, Value):
        return ad.T
    out = Value(ad.T, (a,))

    def _bw(g):
        a.grad += g.T
    out._bw = _bw
    return out


def reshape(a, shape):
    ad = _val(a)
    if not isinstance(a, Value):
        return ad.reshape(shape)
    out = Value(ad.reshape(shape), (a,))

    def _bw(g):
        a.grad += g.reshape(a.data.shape)
    out._bw = _bw
    return out


# ---------------------------------------------------------------------------
# shape assembly
# ---------------------------------------------------------------------------

def concat(xs):
    """Concatenate 1-D vectors."""
    datas = [_val(x) for x in xs]
    out_data = np.concatenate(datas)
    vals = _parents(*xs)
    if not vals:
        return out_data
    out = Value(out_data, vals)
    offsets = np.cumsum([0] + [d.shape[0] for d in datas])

    def _bw(g):
        for x, lo, hi in zip(xs, offsets, offsets[1:]):
            if isinstance(x, Value):
                x.grad += g[lo:hi]
    out._bw = _bw
    return out


def stack_scalars(xs):
    """Pack scalar values into a 1-D vector."""
    datas = [float(_val(x)) for x in xs]
    out_data = np.asarray(datas, dtype=np.float64)
    vals = _parents(*xs)
    if not vals:
        return out_data
    out = Value(out_data, vals)

    def _bw(g):
        for i, x in enumerate(xs):
            if isinstance(x, Value):
                x.grad += g[i]
    out._bw = _bw
    return out


def stack_cols(xs):
    """Stack 1-D vectors as the columns of a (dim, n) matrix."""
    datas = [_val(x) for x in xs]
    out_data = np.stack(datas, axis=1)
    vals = _parents(*xs)
    if not vals:
        return out_data
    out = Value(out_data, vals)

    def _bw(g):
        for i, x in enumerate(xs):
            if isinstance(x, Value):
                x.grad += g[:, i]
    out._bw = _bw
    return out


def vstack(a, b):
    """Stack two matrices (or a matrix and a row-compatible block) vertically."""
    ad_, bd = _val(a), _val(b)
    out_data = np.concatenate([ad_, bd], axis=0)
    if not _parents(a, b):
        return out_data
    out = Value(out_data, _parents(a, b))
    split = ad_.shape[0]

    def _bw(g):
        if isinstance(a, Value):
            a.grad += g[:split]
        if isinstance(b, Value):
            b.grad += g[split:]
    out._bw = _bw
    return out


def tile_col(vec, n: int):
    """Repeat a vector as n identical columns."""
    vd = _val(vec)
    out_data = np.repeat(vd[:, None], n, axis=1)
    if not isinstance(vec, Value):
        return out_data
    out = Value(out_data, (vec,))

    def _bw(g):
        vec.grad += g.sum(axis=1)
    out._bw = _bw
    return out


def append_col(mat, vec):
    """Append a vector as one more column of a matrix."""
    md, vd = _val(mat), _val(vec)
    out_data = np.concatenate([md, vd[:, None]], axis=1)
    if not _parents(mat, vec):
        return out_data
    out = Value(out_data, _parents(mat, vec))

    def _bw(g):
        if isinstance(mat, Value):
            mat.grad += g[:, :-1]
        if isinstance(vec, Value):
            vec.grad += g[:, -1]
    out._bw = _bw
    return out


# ---------------------------------------------------------------------------
# indexing
# ---------------------------------------------------------------------------

def row(table, i: int):
    """One row of a 2-D table (an embedding lookup)."""
    td = _val(table)
    if not isinstance(table, Value):
        return td[i]
    out = Value(td[i], (table,))

    def _bw(g):
        table.grad[i] += g
    out._bw = _bw
    return out


def gather_rows(table, idx, plan=None):
    td = _val(table)
    idx = plan.idx if plan is not None else np.asarray(idx, dtype=np.intp)
    if not isinstance(table, Value):
        return td[idx]
    out = Value(td[idx], (table,))

    def _bw(g):
        if plan is not None:
            table.grad[plan.targets] += np.add.reduceat(g[plan.order], plan.starts, axis=0)
        else:
            np.add.at(table.grad, idx, g)
    out._bw = _bw
    return out


def col(mat, i: int):
    md = _val(mat)
    if not isinstance(mat, Value):
        return md[:, i]
    out = Value(md[:, i], (mat,))

    def _bw(g):
        mat.grad[:, i] += g
    out._bw = _bw
    return out


def element(vec, i: int):
    """One scalar entry of a 1-D vector."""
    vd = _val(vec)
    if not isinstance(vec, Value):
        return vd[i]
    out = Value(vd[i], (vec,))

    def _bw(g):
        vec.grad[i] += g
    out._bw = _bw
    return out


class ScatterPlan:
    """Precomputed reduction plan for repeatedly scattering by one index array.

    Sorting the index once lets every backward pass use a contiguous
    segment-reduction instead of the much slower unbuffered scatter-add.
    """

    __slots__ = ("idx", "order", "starts", "targets")

    def __init__(self, idx):
        self.idx = np.asarray(idx, dtype=np.intp)
        self.order = np.argsort(self.idx, kind="stable")
        sorted_idx = self.idx[self.order]
        first = np.ones(len(sorted_idx), dtype=bool)
        first[1:] = sorted_idx[1:] != sorted_idx[:-1]
        self.starts = np.flatnonzero(first)
        self.targets = sorted_idx[self.starts]


def gather_cols(mat, idx, plan: ScatterPlan | None = None):
    md = _val(mat)
    idx = plan.idx if plan is not None else np.asarray(idx, dtype=np.intp)
    if not isinstance(mat, Value):
        return md[:, idx]
    out = Value(md[:, idx], (mat,))

    def _bw(g):
        if plan is not None:
            summed = np.add.reduceat(g[:, plan.order], plan.starts, axis=1)
            mat.grad[:, plan.targets] += summed
        else:
            np.add.at(mat.grad.T, idx, g.T)
    out._bw = _bw
    return out


def tile_cols(mat, reps: int):
    """Lay ``reps`` copies of a matrix side by side: (k, n) -> (k, n*reps)."""
    md = _val(mat)
    out_data = np.tile(md, (1, reps))
    if not isinstance(mat, Value):
        return out_data
    out = Value(out_data, (mat,))
    n = md.shape[1]

    def _bw(g):
        mat.grad += g.reshape(g.shape[0], reps, n).sum(axis=1)
    out._bw = _bw
    return out


def repeat_cols(mat, reps: int):
    """Repeat each column ``reps`` times consecutively: (k, n) -> (k, n*reps)."""
    md = _val(mat)
    out_data = np.repeat(md, reps, axis=1)
    if not isinstance(mat, Value):
        return out_data
    out = Value(out_data, (mat,))
    n = md.shape[1]

    def _bw(g):
        mat.grad += g.reshape(g.shape[0], n, reps).sum(axis=2)
    out._bw = _bw
    return out


def slice_cols(mat, start: int, stop: int):
    """Contiguous column slice of a matrix."""
    md = _val(mat)
    if not isinstance(mat, Value):
        return md[:, start:stop]
    out = Value(md[:, start:stop], (mat,))

    def _bw(g):
        mat.grad[:, start:stop] += g
    out._bw = _bw
    return out


def repeat_rows(mat, reps: int):
    """Repeat each row ``reps`` times consecutively."""
    md = _val(mat)
    if not isinstance(mat, Value):
        return np.repeat(md, reps, axis=0)
    out = Value(np.repeat(md, reps, axis=0), (mat,))
    n = md.shape[0]

    def _bw(g):
        mat.grad += g.reshape(n, reps, -1).sum(axis=1)
    out._bw = _bw
    return out


def block_rowsum(mat, block: int):
    """Sum consecutive blocks of ``block`` rows: (n*block, m) -> (n, m)."""
    md = _val(mat)
    n = md.shape[0] // block
    out_data = md.reshape(n, block, -1).sum(axis=1)
    if not isinstance(mat, Value):
        return out_data
    out = Value(out_data, (mat,))

    def _bw(g):
        mat.grad += np.repeat(g, block, axis=0)
    out._bw = _bw
    return out


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def tanh(a):
    ad = _val(a)
    out_data = np.tanh(ad)
    if not isinstance(a, Value):
        return out_data
    out = Value(out_data, (a,))

    def _bw(g):
        a.grad += g * (1.0 - out_data * out_data)
    out._bw = _bw
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))


def sigmoid(a):
    ad = np.asarray(_val(a), dtype=np.float64)
    out_data = _sigmoid(ad)
    if not isinstance(a, Value):
        return out_data
    out = Value(out_data, (a,))

    def _bw(g):
        a.grad += g * out_data * (1.0 - out_data)
    out._bw = _bw
    return out


def relu(a):
    ad = _val(a)
    out_data = np.maximum(ad, 0.0)
    if not isinstance(a, Value):
        return out_data
    out = Value(out_data, (a,))
    mask = ad > 0

    def _bw(g):
        a.grad += g * mask
    out._bw = _bw
    return out


def softplus(a):
    ad = np.asarray(_val(a), dtype=np.float64)
    out_data = np.logaddexp(0.0, ad)
    if not isinstance(a, Value):
        return out_data
    out = Value(out_data, (a,))

    def _bw(g):
        a.grad += g * _sigmoid(ad)
    out._bw = _bw
    return out


def exp(a):
    ad = _val(a)
    with np.errstate(over="raise"):
        try:
            out_data = np.exp(ad)
        except FloatingPointError as exc:
            raise NumericError("overflow in exp") from exc
    if not isinstance(a, Value):
        return out_data
    out = Value(out_data, (a,))

    def _bw(g):
        a.grad += g * out_data
    out._bw = _bw
    return out


def log(a):
    ad = _val(a)
    if np.any(ad <= 0):
        raise NumericError("log of non-positive value")
    out_data = np.log(ad)
    if not isinstance(a, Value):
        return out_data
    out = Value(out_data, (a,))

    def _bw(g):
        a.grad += g / ad
    out._bw = _bw
    return out


def softmax(a):
    """Stable softmax over a 1-D vector (max-subtracted)."""
    ad = np.asarray(_val(a), dtype=np.float64)
    if ad.size == 0:
        raise ValueError("softmax over empty input")
    e = np.exp(ad - ad.max())
    out_data = e / e.sum()
    if not isinstance(a, Value):
        return out_data
    out = Value(out_data, (a,))

    def _bw(g):
        a.grad += out_data * (g - np.dot(g, out_data))
    out._bw = _bw
    return out


# ---------------------------------------------------------------------------
# segment ops (edge lists sorted by segment; segments are non-empty)
# ---------------------------------------------------------------------------

def _seg_lengths(starts: np.ndarray, total: int) -> np.ndarray:
    return np.diff(np.append(starts, total))


def segment_softmax(scores, starts):
    """Row-wise softmax within contiguous segments along the last axis."""
    sd = _val(scores)
    starts = np.asarray(starts, dtype=np.intp)
    lengths = _seg_lengths(starts, sd.shape[-1])
    seg_max = np.maximum.reduceat(sd, starts, axis=-1)
    e = np.exp(sd - np.repeat(seg_max, lengths, axis=-1))
    z = np.add.reduceat(e, starts, axis=-1)
    out_data = e / np.repeat(z, lengths, axis=-1)
    if not isinstance(scores, Value):
        return out_data
    out = Value(out_data, (scores,))

    def _bw(g):
        inner = np.add.reduceat(out_data * g, starts, axis=-1)
        scores.grad += out_data * (g - np.repeat(inner, lengths, axis=-1))
    out._bw = _bw
    return out


def segment_sum_cols(mat, starts):
    """Sum matrix columns within contiguous segments: (k, E) -> (k, S)."""
    md = _val(mat)
    starts = np.asarray(starts, dtype=np.intp)
    lengths = _seg_lengths(starts, md.shape[-1])
    out_data = np.add.reduceat(md, starts, axis=-1)
    if not isinstance(mat, Value):
        return out_data
    out = Value(out_data, (mat,))

    def _bw(g):
        mat.grad += np.repeat(g, lengths, axis=-1)
    out._bw = _bw
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def vsum(a):
    """Sum all entries to a scalar."""
    ad = _val(a)
    out_data = np.asarray(ad.sum())
    if not isinstance(a, Value):
        return out_data
    out = Value(out_data, (a,))

    def _bw(g):
        a.grad += np.broadcast_to(g, a.data.shape)
    out._bw = _bw
    return out


def add_n(xs):
    """Sum a non-empty list of same-shaped values."""
    datas = [_val(x) for x in xs]
    out_data = np.sum(datas, axis=0)
    vals = _parents(*xs)
    if not vals:
        return out_data
    out = Value(out_data, vals)

    def _bw(g):
        for x in xs:
            if isinstance(x, Value):
                x.grad += g
    out._bw = _bw
    return out


def square(a):
    return mul(a, a)


# ---------------------------------------------------------------------------
# recurrent cell
# ---------------------------------------------------------------------------

def gru_step(update_w, update_b, reset_w, reset_b, cand_w, cand_b, x, h_prev):
    """One gated-recurrent-unit step.

    z = sigmoid(Wz [x; h] + bz); r = sigmoid(Wr [x; h] + br)
    h~ = tanh(Wh [x; r*h] + bh); h' = (1 - z) * h + z * h~
    """
    xh = concat([x, h_prev])
    z = sigmoid(add(matmul(update_w, xh), update_b))
    r = sigmoid(add(matmul(reset_w, xh), reset_b))
    gated = concat([x, mul(r, h_prev)])
    h_cand = tanh(add(matmul(cand_w, gated), cand_b))
    return add(mul(sub(1.0, z), h_prev), mul(z, h_cand))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _toposort(root: Value) -> list[Value]:
    order: list[Value] = []
    visited: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order  # parents before children


def backward(loss: Value) -> None:
    """Accumulate d(loss)/d(param) into every reachable Param's grad.

    Interior node grads are scratch space reset per call; Param grads
    persist and accumulate across calls until the optimizer consumes them.
    """
    if not isinstance(loss, Value):
        raise TypeError("backward() needs a Value")
    if loss.data.shape != ():
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    order = _toposort(loss)
    for node in order:
        if not isinstance(node, Param):
            node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._bw is not None:
            node._bw(node.grad)


# ---------------------------------------------------------------------------
# parameter store and optimizer
# ---------------------------------------------------------------------------

class ParamStore:
    """Named parameters with their adaptive-moment optimizer state.

    Weight matrices and embeddings initialize uniform in [-0.08, 0.08] from
    the store's seeded generator; biases start at zero.  Creation order is
    part of the determinism contract.
    """

    def __init__(self, seed: int = 0, init_scale: float = INIT_SCALE):
        self.seed = seed
        self.init_scale = init_scale
        self._rng = np.random.default_rng(seed)
        self._params: dict[str, Param] = {}
        self._moment1: dict[str, np.ndarray] = {}
        self._moment2: dict[str, np.ndarray] = {}
        self._step = 0

    def add(self, name: str, shape: tuple[int, ...], init: str = "uniform") -> Param:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if init == "uniform":
            data = self._rng.uniform(-self.init_scale, self.init_scale, size=shape)
        elif init == "zeros":
            data = np.zeros(shape, dtype=np.float64)
        else:
            raise ValueError(f"unknown init {init!r}")
        p = Param(name, data)
        self._params[name] = p
        self._moment1[name] = np.zeros(shape, dtype=np.float64)
        self._moment2[name] = np.zeros(shape, dtype=np.float64)
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def params(self) -> dict[str, Param]:
        return dict(self._params)

    def num_coords(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad.fill(0.0)

    def grad_norm(self) -> float:
        total = 0.0
        for p in self._params.values():
            total += float(np.sum(p.grad * p.grad))
        return math.sqrt(total)

    def adam_step(self, lr: float, clip_norm: float = 5.0,
                  betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
        """Clip gradients to the given global norm, apply one adaptive-moment
        update in place, then zero all gradients."""
        for name, p in self._params.items():
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
        scale = 1.0
        norm = self.grad_norm()
        if clip_norm is not None and norm > clip_norm:
            scale = clip_norm / norm
        self._step += 1
        b1, b2 = betas
        bias1 = 1.0 - b1 ** self._step
        bias2 = 1.0 - b2 ** self._step
        for name, p in self._params.items():
            g = p.grad * scale
            m = self._moment1[name]
            v = self._moment2[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
            p.grad.fill(0.0)

    # -- serialization ------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            name: {"shape": list(p.data.shape), "data": p.data.ravel().tolist()}
            for name, p in self._params.items()
        }

    def load_state_dict(self, state: dict) -> None:
        for name, entry in state.items():
            arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if name in self._params:
                if self._params[name].data.shape != arr.shape:
                    raise ValueError(f"shape mismatch for parameter {name!r}")
                self._params[name].data[...] = arr
            else:
                p = Param(name, arr)
                self._params[name] = p
                self._moment1[name] = np.zeros_like(arr)
                self._moment2[name] = np.zeros_like(arr)


def save_store(store: ParamStore, path: str, config: dict | None = None,
               extras: dict | None = None) -> None:
    doc = {
        "seed": store.seed,
        "config": config or {},
        "extras": extras or {},
        "params": store.state_dict(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, separators=(",", ":"))
        f.write("\n")


def load_store(path: str) -> tuple[ParamStore, dict, dict]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    store = ParamStore(seed=int(doc.get("seed", 0)))
    store.load_state_dict(doc["params"])
    return store, doc.get("config", {}), doc.get("extras", {})


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

def finite_diff_check(store: ParamStore, loss_fn, eps: float = 1e-6,
                      max_coords: int = 1000, seed: int = 0,
                      names: list[str] | None = None) -> float:
    """Compare backward() gradients against central finite differences.

    ``loss_fn`` must be a deterministic closure over the store's parameters
    returning a scalar Value.  Checks every coordinate, or a seeded sample
    of at most ``max_coords`` for large stores.  Returns the maximum
    relative error.
    """
    store.zero_grads()
    loss = loss_fn()
    backward(loss)
    grads = {name: store[name].grad.copy() for name in (names or store.names())}
    store.zero_grads()

    coords = [(name, i) for name in grads for i in range(store[name].data.size)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picked)]

    worst = 0.0
    for name, i in coords:
        flat = store[name].data.ravel()
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(loss_fn().data)
        flat[i] = orig - eps
        f_minus = float(loss_fn().data)
        flat[i] = orig
        fd = (f_plus - f_minus) / (2.0 * eps)
        ad = grads[name].ravel()[i]
        rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-2)
        worst = max(worst, rel)
    return worst
