"""Faithfulness measurement: least/most-relevant-first perturbation
curves, their averages, and the sparsity metrics, for one model."""

from scaat.data import generate_half_informative
from scaat.metrics import (
    EvalProtocol,
    aopc,
    compressed_size,
    evaluate_model,
    gini_index,
    perturbation_curve,
    saliency_entropy,
)
from scaat.models import ModelSpec, predict_proba
from scaat.saliency import vanilla_gsmap
from scaat.training import TrainConfig, scaat_train

train = generate_half_informative(n=800, size=16, classes=2, seed=0)
test = generate_half_informative(n=60, size=16, classes=2, seed=1, split="test")
spec = ModelSpec("cnn", (1, 16, 16), 2, channels=(8, 16), seed=0)
params = scaat_train(train, spec, TrainConfig(mode="regular", batch_size=64, n_iter=150, lr=0.05, seed=0)).params

x = test.images[0]
target = int(predict_proba(params, x).argmax())
smap = vanilla_gsmap(params, x, target)
print(f"single map: entropy {saliency_entropy(smap):.3f} bits, "
      f"gini {gini_index(smap):.3f}, deflate size {compressed_size(smap):.3f} KiB")

lerf = perturbation_curve(params, x, smap, "lerf", steps=20, fraction=0.2, repeats=5, region=2, rng=0)
morf = perturbation_curve(params, x, smap, "morf", steps=20, fraction=0.2, repeats=5, region=2, rng=1)
print("\nstep  lerf decay   morf decay")
for i in range(0, 20, 4):
    print(f"{i+1:3d}   {lerf.values[i]:+.5f}    {morf.values[i]:+.5f}")
print(f"\nAOPC lerf {aopc(lerf):.5f}, morf {aopc(morf):.5f}, relative {aopc(morf)/aopc(lerf):.1f}")

report = evaluate_model(params, test, EvalProtocol(steps=20, fraction=0.2, repeats=5), seed=0)
print("\naggregates over the test split:")
for key in sorted(report.aggregates):
    print(f"  {key:>10}: {report.aggregates[key]:.6g}")
