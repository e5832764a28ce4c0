"""Gradient-based saliency maps and low-saliency index selection.

Maps are per-pixel absolute input gradients (optionally noise-averaged
or path-integrated), reduced over channels by the per-channel maximum so
the map keeps the input's spatial resolution. Region averaging and the
bottom-quantile index selection drive the masked perturbation search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeds
from .autodiff import Tensor, mul, tsum
from .models import ParamSet, forward_eval

# Sorted distinct flat pixel indices into an (H, W) map.
IndexSet = np.ndarray


@dataclass
class SaliencyMap:
    """Non-negative per-pixel attribution scores at input resolution."""

    values: np.ndarray  # (H, W), every entry >= 0
    method: str
    region: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"saliency map must be 2-D, got shape {self.values.shape}")
        if np.any(self.values < 0):
            raise ValueError("saliency map values must be non-negative")


def _channel_reduce(grads: np.ndarray) -> np.ndarray:
    """(C,H,W) or (N,C,H,W) gradients -> per-pixel max of channel |g|."""
    return np.abs(grads).max(axis=-3)


def _input_grads_scores(params: ParamSet, x: np.ndarray, ys: np.ndarray):
    frozen = params.frozen()
    x = np.asarray(x, dtype=np.float64)
    ys = np.atleast_1d(np.asarray(ys))
    xt = Tensor(x, requires_grad=True)
    scores = forward_eval(frozen, xt)
    n, n_classes = scores.data.shape if scores.data.ndim == 2 else (1, scores.data.shape[0])
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), ys] = 1.0
    score_values = scores.data.copy()
    target = tsum(mul(scores, Tensor(onehot.reshape(scores.data.shape))))
    target.backward()
    return xt.grad.reshape(-1, *params.spec.input_shape), score_values


def batch_input_grads(params: ParamSet, x: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """d score_{y_i} / d x_i for every sample, in one backward sweep.

    Samples do not interact in the forward pass, so the gradient of the
    summed per-sample target scores separates exactly per sample.
    """
    return _input_grads_scores(params, x, ys)[0]


def vanilla_gsmap(params: ParamSet, x: np.ndarray, y: int) -> SaliencyMap:
    """Absolute gradient of the class-y score wrt each input pixel."""
    if not 0 <= int(y) < params.spec.n_classes:
        raise ValueError(f"class index {y} out of range for {params.spec.n_classes} classes")
    g = batch_input_grads(params, np.asarray(x)[None], np.array([int(y)]))[0]
    return SaliencyMap(_channel_reduce(g), method="vanilla")


def batch_gsmap(params: ParamSet, x: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vanilla maps for a whole batch; returns (N, H, W) values."""
    return _channel_reduce(batch_input_grads(params, x, ys))


def batch_gsmap_scores(params: ParamSet, x: np.ndarray, ys: np.ndarray):
    """Batch vanilla maps plus the clean scores from the same forward."""
    grads, scores = _input_grads_scores(params, x, ys)
    return _channel_reduce(grads), scores


def smooth_grad(
    params: ParamSet,
    x: np.ndarray,
    y: int,
    n_samples: int,
    sigma: float,
    rng: np.random.Generator | int | None = None,
) -> SaliencyMap:
    """Mean vanilla map over Gaussian-noised copies of the input."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if rng is None or isinstance(rng, int):
        rng = seeds.stream(rng or 0, seeds.SMOOTH)
    x = np.asarray(x, dtype=np.float64)
    noisy = x[None] + sigma * rng.standard_normal((n_samples, *x.shape))
    maps = batch_gsmap(params, noisy, np.full(n_samples, int(y)))
    return SaliencyMap(maps.mean(axis=0), method="smoothgrad")


def integrated_gradients(
    params: ParamSet,
    x: np.ndarray,
    y: int,
    baseline: np.ndarray,
    steps: int,
    return_signed: bool = False,
):
    """Midpoint-rule path integral of gradients from baseline to input.

    The map is the channel-reduced absolute attribution. With
    ``return_signed`` the raw (C,H,W) signed attributions come along,
    whose total approximates the score difference between input and
    baseline.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.shape != x.shape:
        raise ValueError(f"baseline shape {baseline.shape} != input shape {x.shape}")
    alphas = (np.arange(steps) + 0.5) / steps
    path = baseline[None] + alphas[:, None, None, None] * (x - baseline)[None]
    grads = batch_input_grads(params, path, np.full(steps, int(y)))
    signed = (x - baseline) * grads.mean(axis=0)
    smap = SaliencyMap(_channel_reduce(signed[None])[0], method="integrated")
    return (smap, signed) if return_signed else smap


def region_average(smap: SaliencyMap, r: int) -> SaliencyMap:
    """Replace each r x r block by its mean; output keeps the resolution."""
    h, w = smap.values.shape
    if r < 1 or h % r or w % r:
        raise ValueError(f"region side {r} must divide map shape {(h, w)}")
    blocks = smap.values.reshape(h // r, r, w // r, r).mean(axis=(1, 3))
    out = np.repeat(np.repeat(blocks, r, axis=0), r, axis=1)
    return SaliencyMap(out, method=smap.method, region=r)


def quantile_threshold(values, q: float) -> float:
    """Ascending-sort element at position floor(q * n); +inf when q = 1."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("quantile of an empty collection")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile fraction must be in [0, 1], got {q}")
    pos = int(np.floor(q * arr.size))
    if pos >= arr.size:
        return np.inf
    return float(np.sort(arr)[pos])


def lowest(smap: SaliencyMap, q: float) -> IndexSet:
    """Flat indices of pixels strictly below the bottom-q quantile value."""
    flat = smap.values.ravel()
    thr = quantile_threshold(flat, q)
    return np.flatnonzero(flat < thr).astype(np.int64)


# -- export ---------------------------------------------------------------


def to_u8(values: np.ndarray) -> np.ndarray:
    """Min-max normalize to 8-bit grayscale; constant maps become zeros."""
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        return np.rint((values - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return np.zeros_like(values, dtype=np.uint8)


def save_pgm(smap: SaliencyMap, path) -> None:
    u8 = to_u8(smap.values)
    h, w = u8.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.tobytes())


def save_csv(smap: SaliencyMap, path) -> None:
    with open(path, "w", encoding="ascii") as f:
        for row in smap.values:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
