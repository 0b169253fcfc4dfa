"""
Reverse-mode autodiff in a few lines
====================================

Every op records its parents and a backward closure; ``backward`` walks the
graph once.  Here we fit a tiny linear classifier and compare one gradient
against central differences.
"""

import numpy as np

from wavedistill import functional as F
from wavedistill import tensor as T
from wavedistill.gradcheck import check_gradients
from wavedistill.losses import cross_entropy
from wavedistill.optim import SGD
from wavedistill.tensor import Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((64, 3)))
labels = (x.data @ np.array([1.0, -2.0, 0.5]) > 0).astype(int)

w = Tensor(np.zeros((3, 2)), requires_grad=True)
opt = SGD({"w": w}, lr=0.5, momentum=0.9)

for step in range(30):
    loss = cross_entropy(F.linear(x, w), labels)
    loss.backward()
    opt.step()
    if step % 10 == 0:
        print(f"step {step:2d}  loss {loss.item():.4f}")

acc = np.mean(np.argmax(F.linear(x, w).data, axis=1) == labels)
print("train accuracy:", acc)

# analytic vs numerical gradient of a conv + batch-norm chain
xc = Tensor(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
k = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
proj = Tensor(rng.standard_normal((2, 3, 3, 3)))


def objective(xc, k):
    y = F.conv2d(xc, k, stride=2, padding=1)
    y = F.batch_norm2d(y, Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), True)
    return T.square(y * proj).sum()


print("worst relative gradient error:", check_gradients(objective, [xc, k]))
