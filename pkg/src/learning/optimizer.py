"""
Adam optimizer and global gradient-norm clipping over lists of numpy arrays.
"""

import math
from typing import Dict, List, Sequence, Tuple

import numpy as np


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    """Scale gradients so their joint L2 norm is at most max_norm"""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        return [g * scale for g in grads], norm
    return list(grads), norm


class Adam:
    """Adam with bias correction; updates parameter arrays in place"""

    def __init__(self, lr: float, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-5):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: List[np.ndarray] = []
        self.v: List[np.ndarray] = []

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ValueError(f"{len(params)} parameter arrays but {len(grads)} gradients")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]

        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        step_size = self.lr * math.sqrt(correction2) / correction1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= step_size * m / (np.sqrt(v) + self.eps * math.sqrt(correction2))

    def state_dict(self) -> Dict[str, object]:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}

    def load_state_dict(self, state: Dict[str, object]) -> None:
        self.t = int(state["t"])
        self.m = [np.array(m, dtype=float) for m in state["m"]]
        self.v = [np.array(v, dtype=float) for v in state["v"]]
