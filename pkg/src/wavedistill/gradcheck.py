"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numerical_grad(fn, inputs, wrt, h=1e-5):
    """d fn(*inputs) / d inputs[wrt] by central differences (``fn`` returns a scalar Tensor)."""
    x = inputs[wrt]
    g = np.zeros(x.shape)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(*inputs).item()
        flat[i] = orig - h
        fm = fn(*inputs).item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b):
    """``||a - b|| / max(||a||, ||b||)``, zero when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check_gradients(fn, inputs, h=1e-5):
    """Return the worst relative error over every input that requires grad.

    ``fn`` is evaluated on ``inputs`` (Tensors); analytical gradients come from
    one ``backward`` on a fresh forward pass.
    """
    for t in inputs:
        t.grad = None
    fn(*inputs).backward()
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    for k, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        num = numerical_grad(fn, inputs, k, h)
        worst = max(worst, relative_error(analytic[k] if analytic[k] is not None else np.zeros(t.shape), num))
    return worst


def random_projection(out_shape, rng):
    """Fixed random weights turning a tensor output into a scalar test loss."""
    return Tensor(rng.standard_normal(out_shape))
