"""All three saliency methods on one trained model, plus region
averaging and the low-saliency index selection that drives training."""

import numpy as np

from scaat.data import generate_half_informative
from scaat.models import ModelSpec, predict_proba
from scaat.saliency import (
    integrated_gradients,
    lowest,
    region_average,
    save_pgm,
    smooth_grad,
    vanilla_gsmap,
)
from scaat.training import TrainConfig, scaat_train

train = generate_half_informative(n=800, size=16, classes=2, seed=0)
spec = ModelSpec("cnn", (1, 16, 16), 2, channels=(8, 16), seed=0)
result = scaat_train(train, spec, TrainConfig(mode="regular", batch_size=64, n_iter=150, lr=0.05, seed=0))
params = result.params

x = train.images[3]
target = int(predict_proba(params, x).argmax())
print(f"sample 3, predicted class {target}, true patch covers "
      f"{train.meta['relevant_mask'][3].sum()} of 256 pixels")

maps = {
    "vanilla": vanilla_gsmap(params, x, target),
    "smoothgrad": smooth_grad(params, x, target, n_samples=25, sigma=0.1, rng=0),
    "integrated": integrated_gradients(params, x, target, baseline=np.zeros_like(x), steps=32),
}
for name, smap in maps.items():
    inside = smap.values[train.meta["relevant_mask"][3]].mean()
    outside = smap.values[~train.meta["relevant_mask"][3]].mean()
    print(f"{name:>11}: mean saliency inside patch {inside:.4f} vs outside {outside:.4f}")
    save_pgm(smap, f"/tmp/saliency_{name}.pgm")

ravg = region_average(maps["vanilla"], 2)
mask = lowest(ravg, 0.5)
hit_rate = train.meta["relevant_mask"][3].ravel()[mask].mean()
print(f"\nbottom-50% mask has {mask.size} pixels, {hit_rate:.1%} of them inside the patch")
print("PGM exports written to /tmp/saliency_*.pgm")
