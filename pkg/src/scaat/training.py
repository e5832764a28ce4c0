"""Training loops: plain cross-entropy and the saliency-constrained
adaptive adversarial scheme.

Per batch in the adversarial modes: build each sample's region-averaged
gradient saliency map, select its bottom-q_i pixel set, search for the
masked perturbation that maximizes output JS divergence, then take one
SGD step on mean(CE + lambda * JS). The per-sample perturbation
proportion q_i moves by +/-gamma depending on whether the perturbed
sample kept its label, frozen during warm-up and clamped to bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import seeds
from .adversarial import AdvConfig, js_bits_pair, perturb_batch
from .autodiff import Tensor, cross_entropy, mul, softmax, softmax_np, tlog, tmean, tsum
from .models import ModelSpec, ParamSet, forward_eval, init_model

MODES = ("regular", "scaat_fixed_q", "scaat_adaptive_q")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class QState:
    """Per-sample perturbation proportions with their update policy."""

    q: np.ndarray
    q0: float
    q_min: float
    q_max: float
    gamma: float
    warmup_iters: int

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        if not 0.0 <= self.q_min <= self.q0 <= self.q_max <= 1.0:
            raise ValueError(
                f"need 0 <= q_min <= q0 <= q_max <= 1, got "
                f"({self.q_min}, {self.q0}, {self.q_max})"
            )
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        self.check_bounds()

    def check_bounds(self):
        if self.q.size and (self.q.min() < self.q_min or self.q.max() > self.q_max):
            raise AssertionError("q left its configured bounds")


def update_q(q_i: float, iteration: int, adv_correct: bool, qstate: QState) -> float:
    """One proportion update: frozen in warm-up, +/-gamma after, clamped."""
    if iteration <= qstate.warmup_iters:
        new = q_i
    elif adv_correct:
        new = q_i + qstate.gamma
    else:
        new = q_i - qstate.gamma
    return float(min(max(new, qstate.q_min), qstate.q_max))


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on besides the data and model."""

    mode: str = "scaat_adaptive_q"
    lam: float = 1.0          # weight of the divergence term
    batch_size: int = 64
    n_iter: int = 500
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    adv: AdvConfig = field(default_factory=AdvConfig)
    q0: float = 0.5
    gamma: float = 0.05
    q_min: float = 0.1
    q_max: float = 0.9
    warmup_iters: int | None = None   # None -> 10% of n_iter
    train_region: int | None = None   # None -> 4, or 2 below 32x32 inputs

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lam < 0:
            raise ValueError(f"lambda weight must be >= 0, got {self.lam}")
        if self.n_iter < 1 or self.batch_size < 1:
            raise ValueError("n_iter and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")

    def resolved_warmup(self) -> int:
        return self.warmup_iters if self.warmup_iters is not None else int(round(0.1 * self.n_iter))

    def resolved_region(self, input_shape) -> int:
        if self.train_region is not None:
            return self.train_region
        _, h, w = input_shape
        return 4 if min(h, w) >= 32 else 2


@dataclass
class TrainResult:
    params: ParamSet
    qstate: QState
    log: list


def scaat_loss(params: ParamSet, x, x_adv, y: int, lam: float) -> Tensor:
    """Single-sample objective: CE on the clean input plus lam * JS
    between the output distributions on perturbed and clean input."""
    scores = forward_eval(params, x)
    ce = cross_entropy(scores, int(y))
    if lam == 0.0:
        return ce
    scores_adv = forward_eval(params, x_adv)
    p = softmax(scores.reshape((1, -1)))
    pa = softmax(scores_adv.reshape((1, -1)))
    js = tsum(js_bits_pair(pa, p))
    return ce + mul(js, Tensor(float(lam)))


def _batch_loss(params, x, x_adv, labels, lam):
    """Batched loss graph; returns (loss, ce values, js values, clean scores)."""
    scores = forward_eval(params, x)
    n, n_classes = scores.data.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    probs = softmax(scores)
    ce_vec = -tsum(mul(tlog(probs), Tensor(onehot)), axis=1)
    if x_adv is None or lam == 0.0:
        return tmean(ce_vec), ce_vec.data.copy(), None, scores.data
    probs_adv = softmax(forward_eval(params, x_adv))
    js_vec = js_bits_pair(probs_adv, probs)
    loss = tmean(ce_vec + mul(js_vec, Tensor(float(lam))))
    return loss, ce_vec.data.copy(), js_vec.data.copy(), scores.data


def _region_average_batch(maps: np.ndarray, r: int) -> np.ndarray:
    n, h, w = maps.shape
    if h % r or w % r:
        raise ValueError(f"train region side {r} must divide input extents {(h, w)}")
    blocks = maps.reshape(n, h // r, r, w // r, r).mean(axis=(2, 4))
    return np.repeat(np.repeat(blocks, r, axis=1), r, axis=2)


def _lowest_masks(maps: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-sample bottom-q_i masks over flattened pixel values."""
    n, h, w = maps.shape
    flat = maps.reshape(n, -1)
    s = flat.shape[1]
    srt = np.sort(flat, axis=1)
    masks = np.zeros((n, s), dtype=bool)
    for i in range(n):
        pos = int(math.floor(q[i] * s))
        thr = np.inf if pos >= s else srt[i, pos]
        masks[i] = flat[i] < thr
    return masks


def _batches(n: int, batch_size: int, n_iter: int, rng: np.random.Generator):
    """Deterministic epoch shuffling; the last short chunk is kept."""
    produced = 0
    while produced < n_iter:
        perm = rng.permutation(n)
        for lo in range(0, n, batch_size):
            yield perm[lo : lo + batch_size]
            produced += 1
            if produced >= n_iter:
                return


def scaat_train(dataset, spec: ModelSpec, cfg: TrainConfig) -> TrainResult:
    """Run one training arm; deterministic given config and spec seeds.

    Emits one log record per iteration with the loss terms, the global
    mean perturbation proportion and the batch accuracy.
    """
    from .saliency import batch_gsmap_scores  # local import avoids a cycle

    images = np.asarray(dataset.images, dtype=np.float64)
    labels = np.asarray(dataset.labels)
    n = images.shape[0]
    if n == 0:
        raise ValueError("training dataset is empty")

    params = init_model(spec)
    qstate = QState(
        q=np.full(n, cfg.q0),
        q0=cfg.q0,
        q_min=cfg.q_min,
        q_max=cfg.q_max,
        gamma=cfg.gamma,
        warmup_iters=cfg.resolved_warmup(),
    )
    region = cfg.resolved_region(spec.input_shape)
    adversarial_mode = cfg.mode != "regular"
    adaptive = cfg.mode == "scaat_adaptive_q"

    rng_data = seeds.stream(cfg.seed, seeds.DATA)
    rng_pgd = seeds.stream(cfg.seed, seeds.PGD)
    velocity = {name: np.zeros_like(t.data) for name, t in params.items()}
    log: list[dict] = []

    for iteration, idx in enumerate(_batches(n, cfg.batch_size, cfg.n_iter, rng_data), start=1):
        x = images[idx]
        y = labels[idx]

        x_adv = None
        adv_objective = None
        if adversarial_mode:
            maps, clean_scores = batch_gsmap_scores(params, x, y)
            ravg = _region_average_batch(maps, region)
            masks = _lowest_masks(ravg, qstate.q[idx])
            p_clean = softmax_np(clean_scores, axis=-1)
            delta, adv_objective, p_adv = perturb_batch(
                params, x, cfg.adv, masks, rng_pgd, p_clean=p_clean
            )
            x_adv = x + delta
            if adaptive:
                adv_correct = p_adv.argmax(axis=1) == y
                for j, sample in enumerate(idx):
                    qstate.q[sample] = update_q(
                        qstate.q[sample], iteration, bool(adv_correct[j]), qstate
                    )
                qstate.check_bounds()

        loss, ce_vals, js_vals, score_vals = _batch_loss(params, x, x_adv, y, cfg.lam)
        if not np.isfinite(loss.data):
            raise TrainingDiverged(f"non-finite loss at iteration {iteration}")
        loss.backward()

        lr_t = 0.5 * cfg.lr * (1.0 + math.cos(math.pi * (iteration - 1) / cfg.n_iter))
        for name, p in params.items():
            g = p.grad if p.grad is not None else 0.0
            velocity[name] = cfg.momentum * velocity[name] + g
            p.data -= lr_t * velocity[name]
            p.grad = None

        if js_vals is not None:
            l_adv = float(js_vals.mean())
        elif adv_objective is not None:
            l_adv = float(adv_objective.mean())
        else:
            l_adv = 0.0
        log.append(
            {
                "iter": iteration,
                "L_cls": float(ce_vals.mean()),
                "L_adv": l_adv,
                "mean_q": float(qstate.q.mean()),
                "batch_acc": float((score_vals.argmax(axis=1) == y).mean()),
            }
        )

    return TrainResult(params=params, qstate=qstate, log=log)
