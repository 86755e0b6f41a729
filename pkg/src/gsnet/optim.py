"""AMSGrad optimizer and the stepped learning-rate schedule."""

from __future__ import annotations

import numpy as np


def scheduled_lr(base_lr: float, epoch: int, decay: float = 0.65, every: int = 4) -> float:
    """Learning rate for a 0-based epoch: ``base_lr * decay ** (epoch // every)``."""
    if every < 1:
        raise ValueError(f"every must be at least 1, got {every}")
    return base_lr * decay ** (epoch // every)


class AmsGrad:
    """Adam with the max-of-second-moment correction (bias-corrected form).

    State mirrors the parameter dictionary; ``step`` updates parameters in
    place. The maximum of the running second moment replaces the second
    moment itself in the denominator, so the effective step size never
    grows when gradients shrink.
    """

    def __init__(self, params: dict[str, np.ndarray], lr: float = 0.005,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.v_max = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float | None = None) -> None:
        if lr is None:
            lr = self.lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for key, grad in grads.items():
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            np.maximum(self.v_max[key], v, out=self.v_max[key])
            denom = np.sqrt(self.v_max[key] / bc2) + self.eps
            params[key] -= lr * (m / bc1) / denom

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
            "v_max": {k: v.tolist() for k, v in self.v_max.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for name in ("m", "v", "v_max"):
            target = getattr(self, name)
            for key, value in state[name].items():
                target[key] = np.asarray(value, dtype=np.float64)
