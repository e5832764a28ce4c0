"""Train the small CNN on the synthetic patch dataset with plain
cross-entropy, then inspect the loss/accuracy trajectory."""

from scaat.data import generate_half_informative
from scaat.models import ModelSpec, predict_proba
from scaat.training import TrainConfig, scaat_train

train = generate_half_informative(n=800, size=16, classes=2, seed=0, split="train")
test = generate_half_informative(n=200, size=16, classes=2, seed=1, split="test")
spec = ModelSpec("cnn", (1, 16, 16), 2, channels=(8, 16), seed=0)

cfg = TrainConfig(mode="regular", batch_size=64, n_iter=150, lr=0.05, seed=0)
result = scaat_train(train, spec, cfg)

print("iter   L_cls   batch_acc")
for rec in result.log[:: len(result.log) // 8]:
    print(f"{rec['iter']:4d}  {rec['L_cls']:.4f}   {rec['batch_acc']:.3f}")

preds = predict_proba(result.params, test.images).argmax(axis=1)
print(f"\ntest accuracy: {(preds == test.labels).mean():.3f}")
