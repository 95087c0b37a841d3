"""Dense numerical core: 2-D f64 tensors, tape autodiff, Adam, checkpoints.

Everything the classifiers need and nothing more: a record-replay tape of
primitive ops over row-major float64 matrices, reverse-mode gradients, an
Adam optimizer with decoupled weight decay, and the CKPT parameter file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError

CKPT_MAGIC = b"CKPT"


class ShapeError(ValueError):
    pass


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected 2-D array, got shape {arr.shape}")
    return arr


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values in {what}")
    return arr


@dataclass(frozen=True)
class Node:
    """Handle to one tape slot; all math goes through Tape methods."""
    tape: "Tape"
    index: int
    shape: tuple[int, int]


class Tape:
    """Records primitive ops forward; replays them in reverse for gradients.

    backward() may run once per recording; reset_grads() re-arms it with
    values intact.
    """

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._backs: list = []  # None for leaves, else fn(grad) -> [(parent, contrib)]
        self._params: list[int] = []
        self._grads: dict[int, np.ndarray] | None = None
        self._spent = False

    # -- node plumbing ------------------------------------------------------

    def _push(self, value: np.ndarray, back, what: str) -> Node:
        _check_finite(value, what)
        self._values.append(value)
        self._backs.append(back)
        return Node(self, len(self._values) - 1, value.shape)

    def leaf(self, value, param: bool = False) -> Node:
        node = self._push(_as_matrix(value).copy(), None, "leaf")
        if param:
            self._params.append(node.index)
        return node

    def param(self, value) -> Node:
        return self.leaf(value, param=True)

    def constant(self, value) -> Node:
        return self.leaf(value, param=False)

    def value(self, node: Node) -> np.ndarray:
        return self._values[node.index]

    def grad(self, node: Node) -> np.ndarray:
        if self._grads is None:
            raise RuntimeError("backward has not run")
        return self._grads.get(node.index, np.zeros(node.shape))

    def param_nodes(self) -> list[int]:
        return list(self._params)

    def _val(self, node: Node) -> np.ndarray:
        if node.tape is not self:
            raise ValueError("node belongs to a different tape")
        return self._values[node.index]

    # -- primitives ---------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        va, vb = self._val(a), self._val(b)
        if va.shape[1] != vb.shape[0]:
            raise ShapeError(f"matmul mismatch: {va.shape} @ {vb.shape}")
        out = va @ vb

        def back(g):
            return [(a.index, g @ vb.T), (b.index, va.T @ g)]

        return self._push(out, back, "matmul")

    def add(self, a: Node, b: Node) -> Node:
        va, vb = self._val(a), self._val(b)
        if va.shape == vb.shape:
            def back(g):
                return [(a.index, g), (b.index, g)]
        elif vb.shape == (1, va.shape[1]):
            # Bias-style broadcast of a single row over all rows of a.
            def back(g):
                return [(a.index, g), (b.index, g.sum(axis=0, keepdims=True))]
        else:
            raise ShapeError(f"add mismatch: {va.shape} + {vb.shape}")
        return self._push(va + vb, back, "add")

    def mul(self, a: Node, b: Node) -> Node:
        va, vb = self._val(a), self._val(b)
        if va.shape != vb.shape:
            raise ShapeError(f"mul mismatch: {va.shape} * {vb.shape}")

        def back(g):
            return [(a.index, g * vb), (b.index, g * va)]

        return self._push(va * vb, back, "mul")

    def scale(self, a: Node, c: float) -> Node:
        va = self._val(a)

        def back(g):
            return [(a.index, g * c)]

        return self._push(va * c, back, "scale")

    def transpose(self, a: Node) -> Node:
        va = self._val(a)

        def back(g):
            return [(a.index, g.T)]

        return self._push(va.T.copy(), back, "transpose")

    def relu(self, a: Node) -> Node:
        va = self._val(a)
        keep = va > 0

        def back(g):
            return [(a.index, g * keep)]

        return self._push(np.where(keep, va, 0.0), back, "relu")

    def leaky_relu(self, a: Node, slope: float = 0.2) -> Node:
        va = self._val(a)
        factor = np.where(va > 0, 1.0, slope)

        def back(g):
            return [(a.index, g * factor)]

        return self._push(va * factor, back, "leaky_relu")

    def row_softmax(self, a: Node) -> Node:
        va = self._val(a)
        shifted = va - va.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)

        def back(g):
            inner = (g * out).sum(axis=1, keepdims=True)
            return [(a.index, out * (g - inner))]

        return self._push(out, back, "row_softmax")

    def masked_row_softmax(self, a: Node, mask: np.ndarray) -> Node:
        """Softmax per row over positions where mask > 0; zeros elsewhere.

        The mask is a constant. Every row must keep at least one position.
        """
        va = self._val(a)
        keep = np.asarray(mask, dtype=bool)
        if keep.shape != va.shape:
            raise ShapeError(f"mask shape {keep.shape} != input {va.shape}")
        if not keep.any(axis=1).all():
            raise ShapeError("masked_row_softmax: a row has no unmasked entries")
        neg = np.where(keep, va, -np.inf)
        shifted = neg - neg.max(axis=1, keepdims=True)
        e = np.where(keep, np.exp(shifted), 0.0)
        out = e / e.sum(axis=1, keepdims=True)

        def back(g):
            inner = (g * out).sum(axis=1, keepdims=True)
            return [(a.index, out * (g - inner))]

        return self._push(out, back, "masked_row_softmax")

    def row_mean(self, a: Node) -> Node:
        va = self._val(a)
        out = va.mean(axis=0, keepdims=True)

        def back(g):
            return [(a.index, np.broadcast_to(g / va.shape[0], va.shape).copy())]

        return self._push(out, back, "row_mean")

    def concat_cols(self, nodes: list[Node]) -> Node:
        if not nodes:
            raise ShapeError("concat_cols of nothing")
        values = [self._val(n) for n in nodes]
        rows = values[0].shape[0]
        for v in values:
            if v.shape[0] != rows:
                raise ShapeError(f"concat_cols row mismatch: {[v.shape for v in values]}")
        out = np.hstack(values)
        offsets = np.cumsum([0] + [v.shape[1] for v in values])

        def back(g):
            return [
                (n.index, g[:, offsets[i]:offsets[i + 1]])
                for i, n in enumerate(nodes)
            ]

        return self._push(out, back, "concat_cols")

    def cross_entropy(self, logits: Node, labels) -> Node:
        """Mean negative log-likelihood of integer labels; scalar 1x1 output."""
        va = self._val(logits)
        y = np.asarray(labels, dtype=np.int64).reshape(-1)
        if y.shape[0] != va.shape[0]:
            raise ShapeError(f"{y.shape[0]} labels for {va.shape[0]} logit rows")
        if y.size and (y.min() < 0 or y.max() >= va.shape[1]):
            raise ShapeError(f"label out of range for {va.shape[1]} classes")
        m = va.max(axis=1, keepdims=True)
        lse = np.log(np.exp(va - m).sum(axis=1, keepdims=True)) + m
        picked = va[np.arange(va.shape[0]), y][:, None]
        out = np.array([[float((lse - picked).mean())]])
        batch = va.shape[0]

        def back(g):
            soft = np.exp(va - lse)
            soft[np.arange(batch), y] -= 1.0
            return [(logits.index, soft * (float(g[0, 0]) / batch))]

        return self._push(out, back, "cross_entropy")

    def sum_all(self, a: Node) -> Node:
        va = self._val(a)
        out = np.array([[float(va.sum())]])

        def back(g):
            return [(a.index, np.full(va.shape, float(g[0, 0])))]

        return self._push(out, back, "sum_all")

    # -- reverse pass -------------------------------------------------------

    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        """Accumulate d(loss)/d(param) for every parameter node.

        Returns {param index: gradient}. Raises if run twice without
        reset_grads(); the loss must be a 1x1 scalar on this tape.
        """
        if loss.tape is not self:
            raise ValueError("loss node belongs to a different tape")
        if self._spent:
            raise RuntimeError("backward already ran on this tape; call reset_grads() first")
        if self._values[loss.index].shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {self._values[loss.index].shape}")
        grads: dict[int, np.ndarray] = {loss.index: np.ones((1, 1))}
        for idx in range(loss.index, -1, -1):
            g = grads.get(idx)
            back = self._backs[idx]
            if g is None or back is None:
                continue
            for parent, contrib in back(g):
                _check_finite(contrib, f"gradient of node {idx}")
                if parent in grads:
                    grads[parent] = grads[parent] + contrib
                else:
                    grads[parent] = contrib.copy() if contrib.base is not None else contrib
        self._spent = True
        self._grads = grads
        return {p: grads.get(p, np.zeros(self._values[p].shape)) for p in self._params}

    def reset_grads(self) -> None:
        self._grads = None
        self._spent = False


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay


@dataclass
class AdamState:
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-3
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, np.ndarray]:
    """One optimizer step; returns new parameter dict, mutates state.

    Decoupled weight decay shrinks parameters by (1 - lr*wd) before the
    bias-corrected Adam update.
    """
    state.t += 1
    t = state.t
    out: dict[str, np.ndarray] = {}
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            raise KeyError(f"no gradient for parameter {name!r}")
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param {p.shape} for {name!r}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        p = p * (1 - state.lr * state.weight_decay)
        out[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


# ---------------------------------------------------------------------------
# CKPT parameter files


def write_ckpt(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named f64 matrices, sorted by name, little-endian."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = _as_matrix(tensors[name])
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"tensor name too long: {name!r}")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def read_ckpt(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise DataError(f"{path}: truncated header")
    (count,) = struct.unpack_from("<I", raw, 4)
    out: dict[str, np.ndarray] = {}
    off = 8
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode("utf-8")
            off += nlen
            rows, cols = struct.unpack_from("<II", raw, off)
            off += 8
            n = rows * cols
            arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(rows, cols)
            off += 8 * n
            if name in out:
                raise DataError(f"{path}: duplicate tensor {name!r}")
            out[name] = arr.astype(np.float64)
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise DataError(f"{path}: corrupt checkpoint: {exc}")
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes")
    return out
