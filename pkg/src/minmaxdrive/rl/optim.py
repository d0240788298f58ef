"""Adam with global-norm gradient clipping."""
from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, n: int, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 max_grad_norm: float | None = 0.5):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.max_grad_norm = max_grad_norm
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return updated parameters (descent on ``grad``)."""
        if self.max_grad_norm is not None:
            norm = float(np.linalg.norm(grad))
            if norm > self.max_grad_norm:
                grad = grad * (self.max_grad_norm / norm)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "max_grad_norm": self.max_grad_norm, "m": self.m.tolist(), "v": self.v.tolist(), "t": self.t}

    @classmethod
    def from_state(cls, d: dict) -> "Adam":
        opt = cls(len(d["m"]), d["lr"], d["beta1"], d["beta2"], d["eps"], d["max_grad_norm"])
        opt.m = np.array(d["m"], dtype=np.float64)
        opt.v = np.array(d["v"], dtype=np.float64)
        opt.t = int(d["t"])
        return opt
