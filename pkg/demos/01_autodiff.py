"""Reverse-mode autodiff on numpy arrays, checked against finite differences.

Run: python3 demos/01_autodiff.py
"""

# %% A two-layer expression, differentiated in one backward pass
import numpy as np

from mmunet import gradcheck
from mmunet import tensor as T

rng = np.random.default_rng(0)
x = T.Tensor(rng.standard_normal((4, 3)))
w1 = T.Tensor(rng.standard_normal((3, 5)), requires_grad=True)
w2 = T.Tensor(rng.standard_normal((5, 2)), requires_grad=True)

loss = T.mean(T.gelu(x @ w1) @ w2)
loss.backward()
print("loss", float(loss.data))
print("dL/dw2 shape", w2.grad.shape)

# %% Gradients are recomputed, not accumulated, so a second backward is identical
before = w1.grad.copy()
loss.backward()
print("repeat backward identical:", np.array_equal(before, w1.grad))

# %% The same check the test suite runs: contract with a random tensor, compare to central differences
res = gradcheck.gradcheck(
    lambda a, b: T.gelu(a @ b), [T.Tensor(x.data, requires_grad=True), w1], name="gelu(x @ w1)"
)
print(res)

# %% Convolution, pooling and upsampling have closed-form backward passes
for name in ("conv2d", "maxpool2", "upsample_bilinear2", "softmax_ce"):
    print(gradcheck.check_op(name, seed=3))
