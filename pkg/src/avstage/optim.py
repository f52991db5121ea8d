"""Adam optimizer over a ParamTree; frozen parameters are never touched."""

from __future__ import annotations

import numpy as np

from .layers import ParamTree


class Adam:
    def __init__(self, tree: ParamTree, lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.tree = tree
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self):
        """Apply one update from the gradients currently on the tree.

        Parameters with no gradient (unused in the step's graph) are left
        alone. Gradients are consumed: the tree is zeroed afterwards.
        """
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for path, p in self.tree.trainable_items():
            g = p.grad
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for parameter {path!r}")
            m = self._m.get(path)
            if m is None:
                m = np.zeros(p.data.shape)
                v = np.zeros(p.data.shape)
            else:
                v = self._v[path]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self._m[path] = m
            self._v[path] = v
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data - update.astype(p.data.dtype)).astype(p.data.dtype)
        self.tree.zero_grad()
