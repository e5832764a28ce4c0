"""Sparsity and faithfulness metrics for saliency maps.

Sparsity: Shannon entropy of the normalized map, deflate-compressed
8-bit raster size, and the Gini index. Faithfulness: prediction-score
decay curves under least/most-relevant-first region perturbation and
their averages (AOPC), with the relative score AOPC_morf / AOPC_lerf.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import seeds
from .models import ParamSet, predict_proba
from .saliency import SaliencyMap, integrated_gradients, smooth_grad, to_u8, vanilla_gsmap

SALIENCY_METHODS = ("vanilla", "smoothgrad", "integrated")


def saliency_entropy(smap: SaliencyMap) -> float:
    """Shannon entropy (bits) of pixel scores normalized to a distribution."""
    s = smap.values.ravel()
    total = s.sum()
    if total <= 0:
        raise ValueError("entropy undefined for an all-zero saliency map")
    p = s[s > 0] / total
    return float(-(p * np.log2(p)).sum())


def compressed_size(smap: SaliencyMap) -> float:
    """Deflate-compressed size (KiB) of the min-max normalized 8-bit raster."""
    raw = to_u8(smap.values).tobytes()
    return len(zlib.compress(raw)) / 1024.0


def gini_index(smap: SaliencyMap) -> float:
    """Gini index of the score distribution: 0 uniform, (n-1)/n one-hot."""
    a = np.sort(smap.values.ravel())
    n = a.size
    total = a.sum()
    if total <= 0:
        raise ValueError("Gini index undefined for an all-zero saliency map")
    i = np.arange(1, n + 1)
    return float(((2 * i - n - 1) * a).sum() / (n * total))


@dataclass
class PerturbationCurve:
    """Mean prediction-score decay per perturbation step."""

    order: str            # "lerf" | "morf"
    steps: int
    fraction: float
    repeats: int
    values: np.ndarray    # (steps,)


def _tile_ranking(smap_values: np.ndarray, region: int, order: str) -> np.ndarray:
    h, w = smap_values.shape
    tiles = smap_values.reshape(h // region, region, w // region, region).mean(axis=(1, 3)).ravel()
    key = tiles if order == "lerf" else -tiles
    return np.lexsort((np.arange(tiles.size), key))


def perturbation_curve(
    params: ParamSet,
    x: np.ndarray,
    smap: SaliencyMap,
    order: str,
    steps: int = 20,
    fraction: float = 0.2,
    repeats: int = 5,
    region: int = 4,
    rng: np.random.Generator | int | None = None,
) -> PerturbationCurve:
    """Decay of the clean argmax-class probability as ranked regions are
    replaced with uniform-random pixels, cumulatively over ``steps``.

    Ranking is by mean region saliency, ascending for "lerf" and
    descending for "morf"; ties break on region index. The random fill
    is redrawn for each of ``repeats`` passes and decays are averaged.
    """
    if order not in ("lerf", "morf"):
        raise ValueError(f"order must be 'lerf' or 'morf', got {order!r}")
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x = np.asarray(x, dtype=np.float64)
    c_dim, h, w = x.shape
    if h % region or w % region:
        raise ValueError(f"region side {region} must divide image extents {(h, w)}")
    if rng is None or isinstance(rng, int):
        rng = seeds.stream(rng or 0, seeds.EVAL)

    ranking = _tile_ranking(smap.values, region, order)
    n_tiles = ranking.size
    counts = np.floor(np.arange(1, steps + 1) * fraction * n_tiles / steps + 1e-9).astype(int)

    pos_of_tile = np.empty(n_tiles, dtype=np.int64)
    pos_of_tile[ranking] = np.arange(n_tiles)
    step_masks = pos_of_tile[None, :] < counts[:, None]              # (steps, n_tiles)
    step_masks = step_masks.reshape(steps, h // region, w // region)
    step_masks = np.repeat(np.repeat(step_masks, region, axis=1), region, axis=2)

    p_clean = predict_proba(params, x)
    target = int(p_clean.argmax())
    base = p_clean[target]

    decays = np.zeros(steps)
    for _ in range(repeats):
        fill = rng.uniform(0.0, 1.0, size=x.shape)
        batch = np.where(step_masks[:, None, :, :], fill[None], x[None])
        probs = predict_proba(params, batch)
        decays += base - probs[:, target]
    return PerturbationCurve(order, steps, fraction, repeats, decays / repeats)


def aopc(curve: PerturbationCurve) -> float:
    """Arithmetic mean of the decay values."""
    return float(np.mean(curve.values))


@dataclass
class EvalProtocol:
    """Evaluation knobs mirroring the measurement procedure."""

    saliency: str = "vanilla"
    steps: int = 20
    fraction: float = 0.2
    repeats: int = 5
    region: int | None = None        # None -> 8 / 4 / 2 by input size
    smooth_samples: int = 25
    smooth_sigma: float = 0.1
    ig_steps: int = 32
    limit: int | None = None

    def __post_init__(self):
        if self.saliency not in SALIENCY_METHODS:
            raise ValueError(f"saliency must be one of {SALIENCY_METHODS}, got {self.saliency!r}")

    def resolved_region(self, input_shape) -> int:
        if self.region is not None:
            return self.region
        _, h, w = input_shape
        m = min(h, w)
        return 8 if m >= 96 else 4 if m >= 32 else 2

    def to_dict(self) -> dict:
        return {
            "saliency": self.saliency,
            "steps": self.steps,
            "fraction": self.fraction,
            "repeats": self.repeats,
            "region": self.region,
            "smooth_samples": self.smooth_samples,
            "smooth_sigma": self.smooth_sigma,
            "ig_steps": self.ig_steps,
            "limit": self.limit,
        }


PER_SAMPLE_METRICS = ("entropy", "size_kib", "gini", "aopc_lerf", "aopc_morf", "aopc_rel", "correct")


@dataclass
class MetricsReport:
    """Per-sample metric columns plus their aggregates.

    Aggregates are means of the per-sample values, except ``aopc_rel``
    which is the ratio of the aggregated AOPC values (per-sample ratios
    are kept in the columns).
    """

    per_sample: dict
    aggregates: dict
    protocol: dict
    seed: int
    n_samples: int


def saliency_for_sample(params, x, target, protocol: EvalProtocol, rng_seed: int) -> SaliencyMap:
    if protocol.saliency == "vanilla":
        return vanilla_gsmap(params, x, target)
    if protocol.saliency == "smoothgrad":
        rng = seeds.stream(rng_seed, seeds.SMOOTH)
        return smooth_grad(params, x, target, protocol.smooth_samples, protocol.smooth_sigma, rng)
    return integrated_gradients(params, x, target, np.zeros_like(x), protocol.ig_steps)


def _worker_count() -> int:
    env = os.environ.get("SCAAT_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def evaluate_model(params: ParamSet, dataset, protocol: EvalProtocol, seed: int = 0) -> MetricsReport:
    """Full metric sweep over a dataset split.

    Saliency is taken with respect to each sample's predicted class.
    Per-sample randomness derives from (seed, sample index), so results
    are independent of worker scheduling. SCAAT_THREADS caps the
    evaluation fan-out.
    """
    images = np.asarray(dataset.images, dtype=np.float64)
    labels = np.asarray(dataset.labels)
    if protocol.limit is not None:
        images = images[: protocol.limit]
        labels = labels[: protocol.limit]
    n = images.shape[0]
    region = protocol.resolved_region(params.spec.input_shape)

    preds = np.empty(n, dtype=np.int64)
    for lo in range(0, n, 256):
        preds[lo : lo + 256] = predict_proba(params, images[lo : lo + 256]).argmax(axis=1)

    def one(i: int) -> dict:
        x = images[i]
        target = int(preds[i])
        smap = saliency_for_sample(params, x, target, protocol, rng_seed=seed + i)
        lerf = perturbation_curve(
            params, x, smap, "lerf", protocol.steps, protocol.fraction,
            protocol.repeats, region, rng=seeds.stream(seed, seeds.EVAL, i, 0),
        )
        morf = perturbation_curve(
            params, x, smap, "morf", protocol.steps, protocol.fraction,
            protocol.repeats, region, rng=seeds.stream(seed, seeds.EVAL, i, 1),
        )
        a_l, a_m = aopc(lerf), aopc(morf)
        return {
            "entropy": saliency_entropy(smap),
            "size_kib": compressed_size(smap),
            "gini": gini_index(smap),
            "aopc_lerf": a_l,
            "aopc_morf": a_m,
            "aopc_rel": a_m / a_l if a_l != 0 else float("nan"),
            "correct": float(preds[i] == labels[i]),
        }

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(n)))
    else:
        rows = [one(i) for i in range(n)]

    per_sample = {k: np.array([r[k] for r in rows]) for k in PER_SAMPLE_METRICS}
    agg = {k: float(per_sample[k].mean()) for k in ("entropy", "size_kib", "gini", "aopc_lerf", "aopc_morf")}
    agg["accuracy"] = float(per_sample["correct"].mean())
    agg["aopc_rel"] = agg["aopc_morf"] / agg["aopc_lerf"] if agg["aopc_lerf"] != 0 else float("nan")
    return MetricsReport(
        per_sample=per_sample,
        aggregates=agg,
        protocol=protocol.to_dict(),
        seed=seed,
        n_samples=n,
    )
