"""Small image classifiers: an MLP and a two-block CNN.

Both take (C,H,W) images (optionally batched) and emit raw class scores.
``forward_eval`` builds a gradient graph; ``scores_np`` is the plain
numpy path used wherever gradients are not needed.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import seeds
from .autodiff import (
    Tensor,
    conv2d,
    conv2d_np,
    matmul,
    max_pool2d,
    max_pool2d_np,
    relu,
    reshape,
    softmax_np,
)

ARCHS = ("mlp", "cnn")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture tag plus the shapes that pin every parameter."""

    arch: str
    input_shape: tuple[int, int, int]
    n_classes: int
    hidden: tuple[int, ...] = (64,)
    channels: tuple[int, int] = (16, 32)
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}, expected one of {ARCHS}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if len(self.input_shape) != 3 or any(int(e) <= 0 for e in self.input_shape):
            raise ValueError(f"input_shape must be 3 positive extents, got {self.input_shape}")
        object.__setattr__(self, "input_shape", tuple(int(e) for e in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.arch == "cnn":
            _, h, w = self.input_shape
            if h % 4 or w % 4:
                raise ValueError(f"cnn needs spatial extents divisible by 4, got {(h, w)}")
            if len(self.channels) != 2:
                raise ValueError("cnn takes exactly two conv channel counts")

    @property
    def n_features(self) -> int:
        c, h, w = self.input_shape
        return c * h * w


class ParamSet:
    """Named parameter tensors of one model, in a fixed order."""

    def __init__(self, spec: ModelSpec, tensors: "OrderedDict[str, Tensor]"):
        self.spec = spec
        self.tensors = tensors
        self._frozen: ParamSet | None = None

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def frozen(self) -> "ParamSet":
        """Detached view sharing the same buffers; built once, reused.

        In-place parameter updates stay visible through the view, so the
        trainer can keep handing it to saliency/perturbation passes.
        """
        if self._frozen is None:
            det = OrderedDict((k, t.detach()) for k, t in self.tensors.items())
            self._frozen = ParamSet(self.spec, det)
        return self._frozen

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data) for k, t in self.tensors.items())

    @classmethod
    def from_arrays(cls, spec: ModelSpec, arrays) -> "ParamSet":
        od = OrderedDict(
            (k, Tensor(np.asarray(v, dtype=np.float64), requires_grad=True))
            for k, v in arrays.items()
        )
        ps = cls(spec, od)
        for name, t in ps.tensors.items():
            if not np.all(np.isfinite(t.data)):
                raise ValueError(f"parameter {name!r} contains non-finite values")
        return ps


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(spec: ModelSpec) -> ParamSet:
    """Fan-in scaled uniform init, deterministic in ``spec.seed``."""
    rng = seeds.stream(spec.seed, seeds.INIT)
    params: OrderedDict[str, Tensor] = OrderedDict()

    def put(name, arr):
        params[name] = Tensor(arr, requires_grad=True)

    if spec.arch == "mlp":
        dims = [spec.n_features, *spec.hidden, spec.n_classes]
        if any(d <= 0 for d in dims):
            raise ValueError(f"zero-sized layer in mlp dims {dims}")
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            put(f"fc{i}.w", _uniform_fan_in(rng, din, (din, dout)))
            put(f"fc{i}.b", _uniform_fan_in(rng, din, (dout,)))
    else:
        c, h, w = spec.input_shape
        c1, c2 = spec.channels
        if c1 <= 0 or c2 <= 0:
            raise ValueError(f"zero-sized conv layer in channels {spec.channels}")
        put("conv1.w", _uniform_fan_in(rng, c * 9, (c1, c, 3, 3)))
        put("conv1.b", _uniform_fan_in(rng, c * 9, (c1,)))
        put("conv2.w", _uniform_fan_in(rng, c1 * 9, (c2, c1, 3, 3)))
        put("conv2.b", _uniform_fan_in(rng, c1 * 9, (c2,)))
        flat = c2 * (h // 4) * (w // 4)
        put("fc.w", _uniform_fan_in(rng, flat, (flat, spec.n_classes)))
        put("fc.b", _uniform_fan_in(rng, flat, (spec.n_classes,)))
    return ParamSet(spec, params)


def _normalize_input(spec: ModelSpec, x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Return (batched (N,C,H,W) view, was_single). Raises on mismatch."""
    shape = tuple(x.shape)
    full = spec.input_shape
    if shape == full:
        return x.reshape((1, *full)), True
    if len(shape) == 4 and shape[1:] == full:
        return x, False
    if spec.arch == "mlp":
        if shape == (spec.n_features,):
            return x.reshape((1, *full)), True
        if len(shape) == 2 and shape[1] == spec.n_features:
            return x.reshape((-1, *full)), False
    raise ValueError(f"input shape mismatch: expected {full} (or batched), got {shape}")


def forward_eval(params: ParamSet, x) -> Tensor:
    """Raw class scores with a gradient graph.

    Accepts a Tensor or array, single sample or batch; a single (C,H,W)
    input yields a (n_classes,) score vector.
    """
    spec = params.spec
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    batched, single = _normalize_input(spec, xt.data)
    h: Tensor = reshape(xt, batched.shape)

    if spec.arch == "mlp":
        h = reshape(h, (batched.shape[0], spec.n_features))
        n_layers = len(spec.hidden) + 1
        for i in range(n_layers):
            h = matmul(h, params[f"fc{i}.w"]) + params[f"fc{i}.b"]
            if i < n_layers - 1:
                h = relu(h)
    else:
        h = relu(conv2d(h, params["conv1.w"], padding=1) + reshape(params["conv1.b"], (1, -1, 1, 1)))
        h = max_pool2d(h, 2)
        h = relu(conv2d(h, params["conv2.w"], padding=1) + reshape(params["conv2.b"], (1, -1, 1, 1)))
        h = max_pool2d(h, 2)
        h = reshape(h, (batched.shape[0], -1))
        h = matmul(h, params["fc.w"]) + params["fc.b"]

    return reshape(h, (spec.n_classes,)) if single else h


def scores_np(params: ParamSet, x: np.ndarray) -> np.ndarray:
    """Raw class scores on the plain numpy path (no graph)."""
    spec = params.spec
    batched, single = _normalize_input(spec, np.asarray(x, dtype=np.float64))
    w = params.arrays()

    if spec.arch == "mlp":
        h = batched.reshape(batched.shape[0], spec.n_features)
        n_layers = len(spec.hidden) + 1
        for i in range(n_layers):
            h = h @ w[f"fc{i}.w"] + w[f"fc{i}.b"]
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
    else:
        h = conv2d_np(batched, w["conv1.w"], padding=1)
        h = np.maximum(h + w["conv1.b"].reshape(1, -1, 1, 1), 0.0)
        h, _ = max_pool2d_np(h, 2)
        h = conv2d_np(h, w["conv2.w"], padding=1)
        h = np.maximum(h + w["conv2.b"].reshape(1, -1, 1, 1), 0.0)
        h, _ = max_pool2d_np(h, 2)
        h = h.reshape(batched.shape[0], -1) @ w["fc.w"] + w["fc.b"]

    return h[0] if single else h


def predict_proba(params: ParamSet, x: np.ndarray) -> np.ndarray:
    """Softmax class probabilities (plain numpy path)."""
    return softmax_np(scores_np(params, x), axis=-1)
