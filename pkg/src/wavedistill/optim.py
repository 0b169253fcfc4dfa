"""SGD with heavy-ball momentum."""

from __future__ import annotations

import numpy as np


class SGD:
    """``v <- momentum * v + g``; ``p <- p - lr * v``; grads are cleared afterwards.

    ``params`` is a mapping ``name -> Tensor`` so that errors and checkpoints can
    refer to parameters by their stable names.  ``weight_decay`` adds ``wd * p``
    to the gradient before the momentum update.
    """

    def __init__(self, params, lr, momentum=0.0, weight_decay=0.0):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        self.params = dict(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity = {name: np.zeros(p.shape) for name, p in self.params.items()}

    def step(self):
        missing = [name for name, p in self.params.items() if p.grad is None]
        if missing:
            raise RuntimeError(f"parameter {missing[0]!r} has no gradient; run backward first")
        for name, p in self.params.items():
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= self.lr * v
            if not np.isfinite(p.data).all():
                raise FloatingPointError(f"parameter {name!r} became non-finite")
            p.grad = None

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

