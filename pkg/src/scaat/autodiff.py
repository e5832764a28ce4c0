"""Dense tensors with reverse-mode automatic differentiation.

A small numpy-backed engine: each operation records its parents and a
backward closure, ``backward()`` walks the graph once in reverse
topological order. The primitive set is only what the image classifiers
need: add, mul, matmul, conv2d, relu, max_pool2d, reshape, sum, mean,
softmax, log.

All values are float64. Gradients are only computed for branches that
lead to a leaf with ``requires_grad=True``; constant subtrees cost
nothing on the backward pass.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

LOG_FLOOR = 1e-12  # floor applied inside every log argument


class Tensor:
    """A dense n-d array node in a gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, no graph, no gradient request. Shares the buffer."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._consumed = False
        return t

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph construction --------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: backward closures may hand us shared buffers
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        return add(self, Tensor._lift(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, Tensor._lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __sub__(self, other):
        return add(self, -Tensor._lift(other))

    def __rsub__(self, other):
        return add(Tensor._lift(other), -self)

    def __matmul__(self, other):
        return matmul(self, Tensor._lift(other))

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def relu(self):
        return relu(self)

    def log(self):
        return tlog(self)

    # -- backward pass ---------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root.

        Visits each reachable grad-requiring node exactly once. A graph
        can be swept only once; a second call raises.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        if self._consumed:
            raise RuntimeError("backward() called twice on a consumed graph")

        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in order:
            if node._backward is not None:
                node._backward(node.grad)
                node._backward = None
                node._parents = ()
            node._consumed = True


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order of grad-requiring nodes, iteratively."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def backward_grad(loss: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar loss with respect to each leaf.

    Leaves that the loss does not depend on get exact zero gradients.
    """
    loss.backward()
    return [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        for leaf in leaves
    ]


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._consumed = False
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting introduced."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g.reshape(shape)


# -- primitives ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D or 2-D operands."""
    data = a.data @ b.data

    def bwd(g):
        ad, bd = a.data, b.data
        if a.requires_grad:
            if bd.ndim == 1:
                a._accum(g * bd if ad.ndim == 1 else np.outer(g, bd))
            else:
                a._accum(g @ bd.T)
        if b.requires_grad:
            if ad.ndim == 1:
                b._accum(g * ad if bd.ndim == 1 else np.outer(ad, g))
            else:
                b._accum(ad.T @ g)

    return _make(data, (a, b), bwd)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        a._accum(g * (a.data > 0.0))

    return _make(data, (a,), bwd)


def tlog(a: Tensor) -> Tensor:
    """Natural log with the argument floored at LOG_FLOOR."""
    floored = np.maximum(a.data, LOG_FLOOR)
    data = np.log(floored)

    def bwd(g):
        a._accum(g * (a.data > LOG_FLOOR) / floored)

    return _make(data, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def bwd(g):
        a._accum(g.reshape(a.data.shape))

    return _make(data, (a,), bwd)


def tsum(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.data.shape).copy())
        else:
            a._accum(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(np.asarray(data), (a,), bwd)


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    data = a.data.mean(axis=axis)

    def bwd(g):
        if axis is None:
            a._accum(np.broadcast_to(g / n, a.data.shape).copy())
        else:
            a._accum(np.broadcast_to(np.expand_dims(g / n, axis), a.data.shape).copy())

    return _make(np.asarray(data), (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    data = softmax_np(a.data, axis=axis)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accum(data * (g - dot))

    return _make(data, (a,), bwd)


def softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax on plain arrays."""
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


# -- convolution and pooling ----------------------------------------------


def _pad_hw(x: np.ndarray, padding: int) -> np.ndarray:
    if not padding:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    out[:, :, padding : padding + h, padding : padding + w] = x
    return out


def _shifted_view(xp: np.ndarray, dy: int, dx: int, ho: int, wo: int, stride: int):
    return xp[:, :, dy : dy + (ho - 1) * stride + 1 : stride, dx : dx + (wo - 1) * stride + 1 : stride]


def _unfold(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """Offset-major unfold: rows are (dy, dx, channel), columns (n, ho, wo).

    Built from kh*kw cheap strided block copies; the layout feeds one
    large contiguous GEMM per conv (numpy's matmul drops off the BLAS
    path entirely for non-contiguous operands).
    """
    n, c = x.shape[0], x.shape[1]
    xp = _pad_hw(x, padding)
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    cols = np.empty((kh * kw * c, n * ho * wo))
    k = 0
    for dy in range(kh):
        for dx in range(kw):
            xs = _shifted_view(xp, dy, dx, ho, wo, stride)
            np.copyto(cols[k : k + c].reshape(c, n, ho, wo), xs.transpose(1, 0, 2, 3))
            k += c
    return cols, ho, wo


def _kernel_matrix(w: np.ndarray) -> np.ndarray:
    f, c, kh, kw = w.shape
    return np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(f, kh * kw * c)


def _conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    n = x.shape[0]
    f, _, kh, kw = w.shape
    cols, ho, wo = _unfold(x, kh, kw, stride, padding)
    out2 = _kernel_matrix(w) @ cols
    out = np.ascontiguousarray(out2.reshape(f, n, ho, wo).transpose(1, 0, 2, 3))
    return out, cols


def conv2d_np(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Plain cross-correlation of (N,C,H,W) with (F,C,kh,kw) filters."""
    return _conv2d_forward(x, w, stride, padding)[0]


def _conv2d_weight_grad(g: np.ndarray, cols: np.ndarray, w_shape) -> np.ndarray:
    f, c, kh, kw = w_shape
    gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, -1)
    dwm = gm @ cols.T
    return np.ascontiguousarray(dwm.reshape(f, kh, kw, c).transpose(0, 3, 1, 2))


def _conv2d_input_grad(
    g: np.ndarray, w: np.ndarray, x_shape, stride: int, padding: int
) -> np.ndarray:
    """Gradient wrt the conv input: per kernel offset, one transposed
    GEMM scatter-added into the padded input buffer."""
    n, c, h, wd = x_shape
    f, _, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, n * ho * wo)
    dxq = np.zeros((c, n, h + 2 * padding, wd + 2 * padding))
    for dy in range(kh):
        for dx in range(kw):
            wk = np.ascontiguousarray(w[:, :, dy, dx])
            contrib = (wk.T @ gm).reshape(c, n, ho, wo)
            dxq[:, :, dy : dy + (ho - 1) * stride + 1 : stride,
                dx : dx + (wo - 1) * stride + 1 : stride] += contrib
    if padding:
        dxq = dxq[:, :, padding : padding + h, padding : padding + wd]
    return np.ascontiguousarray(dxq.transpose(1, 0, 2, 3))


def conv2d(a: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of (N,C,H,W) input with (F,C,kh,kw) filters."""
    out, cols = _conv2d_forward(a.data, w.data, stride, padding)

    def bwd(g):
        if w.requires_grad:
            w._accum(_conv2d_weight_grad(g, cols, w.data.shape))
        if a.requires_grad:
            a._accum(_conv2d_input_grad(g, w.data, a.data.shape, stride, padding))

    return _make(out, (a, w), bwd)


def max_pool2d_np(x: np.ndarray, k: int):
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"pool size {k} must divide spatial extents {(h, w)}")
    win = x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(n, c, h // k, w // k, k * k)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx


def max_pool2d(a: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k max pooling; ties route to the first maximum."""
    out, idx = max_pool2d_np(a.data, k)

    def bwd(g):
        n, c, h, w = a.data.shape
        flat = np.zeros((n, c, h // k, w // k, k * k))
        np.put_along_axis(flat, idx[..., None], g[..., None], axis=-1)
        a._accum(
            flat.reshape(n, c, h // k, w // k, k, k)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )

    return _make(out, (a,), bwd)


# -- composite losses ------------------------------------------------------


def cross_entropy(scores: Tensor, label: int) -> Tensor:
    """Negative log softmax probability of ``label`` for a 1-D score vector."""
    n_classes = scores.data.shape[-1]
    if scores.data.ndim != 1:
        raise ValueError(f"cross_entropy expects a 1-D score vector, got {scores.shape}")
    if not 0 <= label < n_classes:
        raise ValueError(f"label {label} out of range for {n_classes} classes")
    onehot = np.zeros(n_classes)
    onehot[label] = 1.0
    return -tsum(mul(tlog(softmax(scores)), Tensor(onehot)))


def cross_entropy_batch(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over a (N, n_classes) score matrix."""
    n, n_classes = scores.data.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels out of range for {n_classes} classes")
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    per_sample = -tsum(mul(tlog(softmax(scores)), Tensor(onehot)), axis=1)
    return tmean(per_sample)
