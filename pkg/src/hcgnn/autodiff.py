"""Minimal dense-matrix reverse-mode automatic differentiation.

Tensors are 2-D float64 arrays. Operations record parent references and a
backward closure; `backward` on a scalar loss walks the recorded graph once
in reverse topological order. A second backward on the same graph without a
fresh forward pass is rejected. The operator set is exactly what hierarchical
message passing and its losses need; segment reductions dispatch to the
kernels module (numba or numpy backend).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataError, NumericError, ShapeError


class Tensor:
    """2-D float64 array participating in the gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a 1x1 tensor")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Reverse-accumulate gradients from a 1x1 loss through the recorded graph."""
    if loss.shape != (1, 1):
        raise ShapeError("backward starts from a scalar (1x1) tensor")
    if loss._consumed:
        raise RuntimeError("backward already ran on this graph; rebuild the forward pass")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss._accum(np.ones((1, 1)))
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        if node._consumed:
            raise RuntimeError("graph node already consumed by a previous backward")
        node._backward(node.grad)
        node._consumed = True
    loss._consumed = True


# ---------------------------------------------------------------------------
# segment index
# ---------------------------------------------------------------------------

@dataclass
class SegmentIndex:
    """CSR map: output row g aggregates input rows indices[indptr[g]:indptr[g+1]]."""

    indices: np.ndarray
    indptr: np.ndarray
    num_input_rows: int

    def __post_init__(self):
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        if self.indices.size and (
            self.indices.min() < 0 or self.indices.max() >= self.num_input_rows
        ):
            raise IndexError("segment member out of range")

    @classmethod
    def from_lists(cls, lists, num_input_rows: int) -> "SegmentIndex":
        indptr = np.zeros(len(lists) + 1, dtype=np.int64)
        flat = []
        for i, members in enumerate(lists):
            flat.extend(members)
            indptr[i + 1] = indptr[i] + len(members)
        return cls(np.array(flat, dtype=np.int64), indptr, num_input_rows)

    @property
    def num_segments(self) -> int:
        return len(self.indptr) - 1

    def counts(self) -> np.ndarray:
        return np.diff(self.indptr)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from None

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from None

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape} do not chain")
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(data, (a, b), bw)


def _require_finite(x: np.ndarray, op: str) -> None:
    if not np.isfinite(x).all():
        raise NumericError(f"{op}: non-finite input")


def relu(x: Tensor) -> Tensor:
    _require_finite(x.data, "relu")
    mask = x.data > 0

    def bw(g):
        if x.requires_grad:
            x._accum(g * mask)

    return _make(x.data * mask, (x,), bw)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    _require_finite(x.data, "leaky_relu")
    mask = x.data > 0
    scale = np.where(mask, 1.0, slope)

    def bw(g):
        if x.requires_grad:
            x._accum(g * scale)

    return _make(x.data * scale, (x,), bw)


def softmax_rows(x: Tensor) -> Tensor:
    _require_finite(x.data, "softmax_rows")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        if x.requires_grad:
            x._accum(y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _make(y, (x,), bw)


def log_softmax_rows(x: Tensor) -> Tensor:
    _require_finite(x.data, "log_softmax_rows")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def bw(g):
        if x.requires_grad:
            x._accum(g - sm * g.sum(axis=1, keepdims=True))

    return _make(out, (x,), bw)


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row by max(||row||_2, eps); zero rows stay (near) zero."""
    _require_finite(x.data, "l2_normalize_rows")
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    denom = np.maximum(norms, eps)
    y = x.data / denom
    big = (norms > eps)[:, 0]

    def bw(g):
        if not x.requires_grad:
            return
        gx = g / denom
        proj = (g * y).sum(axis=1, keepdims=True) / denom
        gx[big] -= (y * proj)[big]
        x._accum(gx)

    return _make(y, (x,), bw)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    index = np.ascontiguousarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise IndexError("gather index out of range")
    data = x.data[index]

    def bw(g):
        if x.requires_grad:
            x._accum(kernels.scatter_add_rows(np.ascontiguousarray(g), index, x.shape[0]))

    return _make(data, (x,), bw)


def slice_rows(x: Tensor, lo: int, hi: int) -> Tensor:
    if not 0 <= lo <= hi <= x.shape[0]:
        raise IndexError(f"row slice [{lo}:{hi}] out of range for {x.shape}")
    data = x.data[lo:hi]

    def bw(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[lo:hi] = g
            x._accum(full)

    return _make(data, (x,), bw)


def concat_rows(parts: list[Tensor]) -> Tensor:
    width = parts[0].shape[1]
    if any(p.shape[1] != width for p in parts):
        raise ShapeError("concat_rows needs equal column counts")
    data = np.vstack([p.data for p in parts])
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accum(g[lo:hi])

    return _make(data, tuple(parts), bw)


def reshape(x: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != x.data.size:
        raise ShapeError(f"cannot reshape {x.shape} to ({rows}, {cols})")
    data = x.data.reshape(rows, cols)

    def bw(g):
        if x.requires_grad:
            x._accum(g.reshape(x.shape))

    return _make(data, (x,), bw)


def sum_all(x: Tensor) -> Tensor:
    data = np.array([[x.data.sum()]])

    def bw(g):
        if x.requires_grad:
            x._accum(np.full_like(x.data, g[0, 0]))

    return _make(data, (x,), bw)


def segment_mean(x: Tensor, idx: SegmentIndex) -> Tensor:
    """Row g of the output is the mean of x's rows in segment g."""
    if idx.num_input_rows != x.shape[0]:
        raise ShapeError("segment index built for a different row count")
    counts = idx.counts()
    if (counts == 0).any():
        raise IndexError("segment_mean: empty segment")
    sums = kernels.seg_sum(x.data, idx.indices, idx.indptr)
    data = sums / counts[:, None]

    def bw(g):
        if x.requires_grad:
            x._accum(
                kernels.seg_mean_backward(
                    np.ascontiguousarray(g), idx.indices, idx.indptr, x.shape[0]
                )
            )

    return _make(data, (x,), bw)


def segment_weighted_sum(x: Tensor, idx: SegmentIndex, weights: Tensor) -> Tensor:
    """Row g = sum of w_{g,i} * x_i over segment members; grads reach x and weights."""
    if idx.num_input_rows != x.shape[0]:
        raise ShapeError("segment index built for a different row count")
    if weights.shape != (len(idx.indices), 1):
        raise ShapeError(
            f"need one weight per (segment, member) pair: {weights.shape} vs "
            f"({len(idx.indices)}, 1)"
        )
    w = weights.data[:, 0]
    data = kernels.seg_weighted_sum(x.data, idx.indices, idx.indptr, w)

    def bw(g):
        gx, gw = kernels.seg_weighted_sum_backward(
            np.ascontiguousarray(g), x.data, idx.indices, idx.indptr, w
        )
        if x.requires_grad:
            x._accum(gx)
        if weights.requires_grad:
            weights._accum(gw[:, None])

    return _make(data, (x, weights), bw)


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log softmax probability of the target class over masked rows."""
    n, c = logits.shape
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    mask = np.arange(n, dtype=np.int64) if mask is None else np.ascontiguousarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("cross_entropy: empty mask")
    t = targets[mask]
    if t.min() < 0 or t.max() >= c:
        raise IndexError("cross_entropy: target class out of range")
    sub = logits.data[mask]
    shifted = sub - sub.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    data = np.array([[-logp[np.arange(len(mask)), t].mean()]])
    sm = np.exp(logp)

    def bw(g):
        if logits.requires_grad:
            d = sm.copy()
            d[np.arange(len(mask)), t] -= 1.0
            full = np.zeros_like(logits.data)
            full[mask] = d * (g[0, 0] / len(mask))
            logits._accum(full)

    return _make(data, (logits,), bw)


def bce_with_logits(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross entropy of sigmoid(scores) against {0,1} labels."""
    y = np.ascontiguousarray(labels, dtype=np.float64).reshape(-1)
    if scores.data.size != y.size:
        raise ShapeError(f"{scores.data.size} scores vs {y.size} labels")
    s = scores.data.reshape(-1)
    # stable: max(s,0) - s*y + log(1 + exp(-|s|))
    data = np.array([[np.mean(np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s))))]])

    def bw(g):
        if scores.requires_grad:
            sig = 1.0 / (1.0 + np.exp(-s))
            scores._accum(((sig - y) * (g[0, 0] / y.size)).reshape(scores.shape))

    return _make(data, (scores,), bw)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f, at: Tensor, h: float = 1e-4) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Coordinates sitting on a kink (symmetric second difference larger than
    10 * h^1.5 * scale) are excluded, since central differences are
    meaningless there.
    """
    probe = Tensor(at.data.copy(), requires_grad=True)
    out = f(probe)
    if out.shape != (1, 1):
        raise ShapeError("grad_check needs a scalar-valued function")
    f0 = out.item()
    backward(out)
    analytic = np.zeros_like(probe.data) if probe.grad is None else probe.grad
    scale = max(1.0, abs(f0))
    worst = 0.0
    base = at.data.copy()
    for i in range(base.shape[0]):
        for j in range(base.shape[1]):
            pert = base.copy()
            pert[i, j] += h
            fp = f(Tensor(pert)).item()
            pert[i, j] -= 2 * h
            fm = f(Tensor(pert)).item()
            if abs(fp + fm - 2 * f0) > 10.0 * h**1.5 * scale:
                continue  # kink window
            numeric = (fp - fm) / (2 * h)
            a = analytic[i, j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"HCGN"
_VERSION = 1


def save_arrays(path, arrays) -> None:
    """Flat binary checkpoint: magic, version, count, then (rows, cols, data)*."""
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HQ", _VERSION, len(arrays)))
        for arr in arrays:
            a = np.ascontiguousarray(arr, dtype=np.float64)
            if a.ndim != 2:
                raise ShapeError("checkpoints store 2-D arrays")
            fh.write(struct.pack("<QQ", a.shape[0], a.shape[1]))
            fh.write(a.tobytes())


def load_arrays(path):
    with Path(path).open("rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<HQ", fh.read(10))
        if version != _VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        out = []
        for _ in range(count):
            rows, cols = struct.unpack("<QQ", fh.read(16))
            buf = fh.read(rows * cols * 8)
            if len(buf) != rows * cols * 8:
                raise DataError(f"{path}: truncated checkpoint")
            out.append(np.frombuffer(buf, dtype=np.float64).reshape(rows, cols).copy())
        return out
