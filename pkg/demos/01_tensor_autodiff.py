"""Tour of the autodiff engine: build a graph, backprop, check a gradient.

Run: python3 demos/01_tensor_autodiff.py
"""

import numpy as np

from deskrl import tensor as T
from deskrl.rng import Rng
from deskrl.tensor import Tensor

rng = Rng(0)

# A tiny two-layer network on random data, written directly against the ops.
x = Tensor(rng.normal(size=(4, 3)))
w1 = Tensor(rng.normal(size=(3, 8)) * 0.5, requires_grad=True)
b1 = Tensor(np.zeros(8), requires_grad=True)
w2 = Tensor(rng.normal(size=(8, 1)) * 0.5, requires_grad=True)
b2 = Tensor(np.zeros(1), requires_grad=True)
target = Tensor(rng.normal(size=(4, 1)))

hidden = T.relu(T.dense(x, w1, b1))
pred = T.dense(hidden, w2, b2)
loss = T.tmean(T.square(T.sub(pred, target)))
loss.backward()
print(f"loss = {loss.item():.6f}")
print(f"dL/dw2 first row = {w2.grad[:1]}")

# Gradients agree with central finite differences.
h = 1e-5
i, j = 1, 4
orig = w1.data[i, j]
w1.data[i, j] = orig + h
lp = T.tmean(T.square(T.sub(T.dense(T.relu(T.dense(x, w1, b1)), w2, b2), target))).item()
w1.data[i, j] = orig - h
lm = T.tmean(T.square(T.sub(T.dense(T.relu(T.dense(x, w1, b1)), w2, b2), target))).item()
w1.data[i, j] = orig
fd = (lp - lm) / (2 * h)
print(f"analytic dL/dw1[{i},{j}] = {w1.grad[i, j]:.10f}")
print(f"finite-difference      = {fd:.10f}")

# Convolutions: a 3x3 edge filter over a random image, 2D and depth-1 3D
# agree exactly.
img = rng.normal(size=(1, 1, 8, 8))
edge = np.array([[[[-1.0, 0, 1], [-2, 0, 2], [-1, 0, 1]]]])
spec2 = T.ConvSpec((3, 3), (1, 1), (1, 1), 1, 1)
spec3 = T.ConvSpec((1, 3, 3), (1, 1, 1), (0, 1, 1), 1, 1)
y2 = T.conv2d(Tensor(img), Tensor(edge), spec2)
y3 = T.conv3d(Tensor(img[:, :, None]), Tensor(edge[:, :, None]), spec3)
print(f"conv3d(depth=1) == conv2d: "
      f"{np.abs(y3.data[:, :, 0] - y2.data).max():.2e} max abs difference")
