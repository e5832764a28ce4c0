"""Masked adversarial perturbation search and output divergences.

The search maximizes the Jensen-Shannon divergence (in bits, symmetrized
KL per the printed definition) between the model's output distribution
on the perturbed and the clean input, subject to three exact
constraints: an L-infinity budget, zero perturbation outside a given
low-saliency pixel set, and valid pixel range after addition.

Both the iterated (pgd) and single-step (fgsm) variants start from a
uniform random point inside the masked budget box, mirrored to whichever
sign scores better; the divergence objective has an exactly zero
gradient at the clean input, so a deterministic zero start would never
move, and plain ascent cannot cross the valley between the two signs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeds
from .autodiff import Tensor, mul, softmax, softmax_np, tlog, tsum, LOG_FLOOR
from .models import ParamSet, forward_eval, scores_np
from .saliency import IndexSet

_LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class AdvConfig:
    """Search hyperparameters: budget, step count, step size, variant."""

    epsilon: float = 8.0 / 255.0
    k: int = 4
    alpha: float | None = None  # None resolves to epsilon / 2
    variant: str = "pgd"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.variant not in ("pgd", "fgsm"):
            raise ValueError(f"variant must be 'pgd' or 'fgsm', got {self.variant!r}")

    @property
    def step_size(self) -> float:
        return self.alpha if self.alpha is not None else self.epsilon / 2.0


@dataclass
class Perturbation:
    """A found perturbation plus the objective it achieved."""

    delta: np.ndarray        # same shape as the input, exactly 0 off-mask
    mask: IndexSet           # flat pixel indices that were perturbable
    objective: float         # JS divergence (bits) at x + delta
    adv_proba: np.ndarray    # output distribution at x + delta


# -- divergences ------------------------------------------------------------


def _check_simplex(p: np.ndarray, name: str) -> None:
    if p.min() < 0:
        raise ValueError(f"{name} has negative entries")
    s = p.sum()
    if abs(s - 1.0) > 1e-6:
        raise ValueError(f"{name} sums to {s!r}, expected 1 within 1e-6")


def kl_div(p, q) -> float:
    """KL divergence in bits, log arguments floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution length mismatch: {p.shape} vs {q.shape}")
    _check_simplex(p, "P")
    _check_simplex(q, "Q")
    return float(
        (p * (np.log(np.maximum(p, LOG_FLOOR)) - np.log(np.maximum(q, LOG_FLOOR)))).sum()
        / _LN2
    )


def js_div(p, q) -> float:
    """Symmetrized KL: half of each direction, in bits."""
    return 0.5 * kl_div(p, q) + 0.5 * kl_div(q, p)


def js_bits_np(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise JS divergence for (N, C) distribution pairs, no checks."""
    lp = np.log(np.maximum(p, LOG_FLOOR))
    lq = np.log(np.maximum(q, LOG_FLOOR))
    kl_pq = (p * (lp - lq)).sum(axis=-1)
    kl_qp = (q * (lq - lp)).sum(axis=-1)
    return 0.5 * (kl_pq + kl_qp) / _LN2


def js_bits_graph(p: Tensor, q_const: np.ndarray) -> Tensor:
    """Graph version of row-wise JS against a constant distribution."""
    q = Tensor(q_const)
    lp = tlog(p)
    lq = np.log(np.maximum(q_const, LOG_FLOOR))
    kl_pq = tsum(mul(p, lp - Tensor(lq)), axis=-1)
    kl_qp = tsum(mul(q, Tensor(lq) - lp), axis=-1)
    return mul(kl_pq + kl_qp, Tensor(0.5 / _LN2))


def js_bits_pair(p: Tensor, q: Tensor) -> Tensor:
    """Row-wise JS between two graph branches; gradients flow into both."""
    lp = tlog(p)
    lq = tlog(q)
    kl_pq = tsum(mul(p, lp - lq), axis=-1)
    kl_qp = tsum(mul(q, lq - lp), axis=-1)
    return mul(kl_pq + kl_qp, Tensor(0.5 / _LN2))


# -- masked search -----------------------------------------------------------


def _as_mask_array(masks, n: int, n_pixels: int) -> np.ndarray:
    """Normalize per-sample index sets to a boolean (N, n_pixels) array."""
    out = np.zeros((n, n_pixels), dtype=bool)
    for i, m in enumerate(masks):
        idx = np.asarray(m, dtype=np.int64)
        if idx.size:
            if idx.min() < 0 or idx.max() >= n_pixels:
                raise ValueError(f"mask indices out of range [0, {n_pixels})")
            out[i, idx] = True
    return out


def _project(delta, x, eps, mask_pix):
    """Exact feasibility: budget clip, off-mask zeroing, range clip.

    The range constraint is applied as bounds on delta itself; the
    add-then-subtract form can round a boundary delta one ulp past the
    budget, and these constraints are contractually exact.
    """
    delta = np.clip(delta, -eps, eps)
    delta = delta * mask_pix
    return np.clip(delta, -x, 1.0 - x)


def _objective_and_grad(frozen, x_adv, p_clean):
    xt = Tensor(x_adv, requires_grad=True)
    probs = softmax(forward_eval(frozen, xt))
    js_vec = js_bits_graph(probs, p_clean)
    tsum(js_vec).backward()
    return js_vec.data.copy(), xt.grad, probs.data


def _objective_plain(frozen, x_adv, p_clean):
    probs = softmax_np(scores_np(frozen, x_adv), axis=-1)
    return js_bits_np(probs, p_clean), probs


def perturb_batch(
    params: ParamSet,
    x: np.ndarray,
    cfg: AdvConfig,
    masks,
    rng: np.random.Generator,
    p_clean: np.ndarray | None = None,
    return_candidates: bool = False,
):
    """Run the masked search for a whole batch.

    Returns (delta, objective, adv_proba) stacked over samples; with
    ``return_candidates`` also the per-step objective matrix the best
    iterate was selected from.
    """
    frozen = params.frozen()
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    mask_flat = masks if isinstance(masks, np.ndarray) and masks.dtype == bool else _as_mask_array(masks, n, h * w)
    mask_pix = mask_flat.reshape(n, 1, h, w)
    eps = cfg.epsilon

    if p_clean is None:
        p_clean = softmax_np(scores_np(frozen, x), axis=-1)

    # Uniform random start, but pick the better of the two mirrored signs
    # per sample: the objective is locally U-shaped around the clean
    # input, and plain ascent cannot cross back over that valley.
    draw = rng.uniform(-eps, eps, size=x.shape) * mask_pix
    d_plus = _project(draw, x, eps, mask_pix)
    d_minus = _project(-draw, x, eps, mask_pix)
    j_plus, _ = _objective_plain(frozen, x + d_plus, p_clean)
    j_minus, _ = _objective_plain(frozen, x + d_minus, p_clean)
    delta = np.where((j_plus >= j_minus)[:, None, None, None], d_plus, d_minus)

    if cfg.variant == "fgsm":
        _, grad, _ = _objective_and_grad(frozen, x + delta, p_clean)
        delta = _project(eps * np.sign(grad) * mask_pix, x, eps, mask_pix)
        obj, probs = _objective_plain(frozen, x + delta, p_clean)
        return (delta, obj, probs, obj[None]) if return_candidates else (delta, obj, probs)

    alpha = cfg.step_size
    cand_deltas = np.empty((cfg.k, *x.shape))
    cand_objs = np.empty((cfg.k, n))
    cand_probs = np.empty((cfg.k, n, p_clean.shape[-1]))
    for t in range(cfg.k):
        if t == 0:
            _, grad, _ = _objective_and_grad(frozen, x + delta, p_clean)
        else:
            obj, grad, probs = _objective_and_grad(frozen, x + delta, p_clean)
            cand_objs[t - 1] = obj
            cand_probs[t - 1] = probs
        delta = _project(delta + alpha * np.sign(grad), x, eps, mask_pix)
        cand_deltas[t] = delta
    cand_objs[-1], cand_probs[-1] = _objective_plain(frozen, x + delta, p_clean)

    best = cand_objs.argmax(axis=0)
    rows = np.arange(n)
    out_delta = cand_deltas[best, rows]
    out_obj = cand_objs[best, rows]
    out_probs = cand_probs[best, rows]
    if return_candidates:
        return out_delta, out_obj, out_probs, cand_objs
    return out_delta, out_obj, out_probs


def _single(params, x, y, cfg, mask, rng, expected_variant) -> Perturbation:
    if cfg.variant != expected_variant:
        raise ValueError(f"config variant {cfg.variant!r} does not match {expected_variant!r} search")
    if not 0 <= int(y) < params.spec.n_classes:
        raise ValueError(f"class index {y} out of range for {params.spec.n_classes} classes")
    if rng is None or isinstance(rng, int):
        rng = seeds.stream(rng or 0, seeds.PGD)
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.int64)
    delta, obj, probs = perturb_batch(params, x[None], cfg, [mask], rng)
    return Perturbation(delta=delta[0], mask=mask, objective=float(obj[0]), adv_proba=probs[0])


def pgd_masked(params: ParamSet, x, y: int, cfg: AdvConfig, mask, rng=None) -> Perturbation:
    """Best-of-k projected ascent on the masked JS objective.

    The class label is accepted for signature parity with the training
    loop but the objective depends only on the output distributions.
    """
    return _single(params, x, y, cfg, mask, rng, "pgd")


def fgsm_masked(params: ParamSet, x, y: int, cfg: AdvConfig, mask, rng=None) -> Perturbation:
    """One signed-gradient step of magnitude epsilon on masked pixels."""
    return _single(params, x, y, cfg, mask, rng, "fgsm")
