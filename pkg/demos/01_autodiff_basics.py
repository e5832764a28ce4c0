"""Tour of the tensor engine: forward graphs, backward sweeps, and a
finite-difference spot check of a small convolutional stack."""

import numpy as np

from scaat.autodiff import Tensor, backward_grad, conv2d, max_pool2d, relu, tsum, mul

rng = np.random.default_rng(0)

# scalars behave like you expect
x = Tensor([3.0], requires_grad=True)
loss = tsum(mul(x, x))
loss.backward()
print(f"d(x^2)/dx at x=3  ->  {x.grad[0]:.1f}")

# a conv-relu-pool stack, differentiated with respect to its input
image = Tensor(rng.uniform(0, 1, (1, 1, 8, 8)), requires_grad=True)
kernel = Tensor(rng.standard_normal((4, 1, 3, 3)), requires_grad=True)
feat = max_pool2d(relu(conv2d(image, kernel, padding=1)), 2)
probe = Tensor(rng.standard_normal(feat.shape))
scalar = tsum(mul(feat, probe))
g_image, g_kernel = backward_grad(scalar, [image, kernel])
print(f"input gradient shape {g_image.shape}, kernel gradient shape {g_kernel.shape}")

# central differences agree with the backward sweep
def f(arr):
    out = max_pool2d(relu(conv2d(Tensor(arr), Tensor(kernel.data), padding=1)), 2)
    return float((out.data * probe.data).sum())

idx = (0, 0, 4, 4)
h = 1e-4
bumped_up = image.data.copy(); bumped_up[idx] += h
bumped_dn = image.data.copy(); bumped_dn[idx] -= h
fd = (f(bumped_up) - f(bumped_dn)) / (2 * h)
print(f"one coordinate: backward {g_image[idx]:+.6f} vs finite difference {fd:+.6f}")
