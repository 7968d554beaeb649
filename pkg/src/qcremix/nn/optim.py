"""ADADELTA with a learning-rate scale, and plateau-based scale decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class Adadelta:
    """ADADELTA update with a multiplicative learning-rate scale.

    Per parameter::

        Eg2  <- rho * Eg2  + (1 - rho) * g**2
        dx    = sqrt(Edx2 + eps) / sqrt(Eg2 + eps) * g
        Edx2 <- rho * Edx2 + (1 - rho) * dx**2
        p    <- p - lr * dx

    The squared-update accumulator tracks the unscaled ``dx``.
    """

    def __init__(self, lr=0.1, rho=0.95, eps=1e-6):
        if lr <= 0:
            raise ValueError("learning-rate scale must be positive")
        self.lr = float(lr)
        self.rho = float(rho)
        self.eps = float(eps)
        self.eg2 = {}
        self.edx2 = {}
        self.steps = 0

    def step(self, params, grads):
        """Update ``params`` (dict name -> array) in place from ``grads``."""
        rho, eps = self.rho, self.eps
        for name, p in params.items():
            g = grads[name]
            if name not in self.eg2:
                self.eg2[name] = np.zeros_like(p)
                self.edx2[name] = np.zeros_like(p)
            eg2 = self.eg2[name]
            edx2 = self.edx2[name]
            eg2 *= rho
            eg2 += (1 - rho) * g * g
            dx = np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps) * g
            edx2 *= rho
            edx2 += (1 - rho) * dx * dx
            p -= (self.lr * dx).astype(p.dtype, copy=False)
        self.steps += 1

    def state_arrays(self) -> dict:
        out = {}
        for name in sorted(self.eg2):
            out[f"{name}.eg2"] = self.eg2[name]
            out[f"{name}.edx2"] = self.edx2[name]
        return out

    def load_state_arrays(self, arrays):
        self.eg2 = {k[: -len(".eg2")]: np.array(v) for k, v in arrays.items() if k.endswith(".eg2")}
        self.edx2 = {k[: -len(".edx2")]: np.array(v) for k, v in arrays.items() if k.endswith(".edx2")}

    def hyper(self) -> dict:
        return {"lr": self.lr, "rho": self.rho, "eps": self.eps, "steps": self.steps}


@dataclass
class PlateauScheduler:
    """Multiply the scale by ``factor`` once ``patience`` epochs pass without improvement.

    An epoch improves when its loss is strictly below the best so far.  The
    wait counter resets after every reduction.
    """

    patience: int = 5
    factor: float = 0.5
    min_lr: float = 0.0
    best: float = field(default=float("inf"))
    wait: int = 0

    def step(self, loss, optimizer) -> bool:
        """Feed one validation loss; returns True when the scale was reduced."""
        if loss < self.best:
            self.best = float(loss)
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.patience:
            optimizer.lr = max(optimizer.lr * self.factor, self.min_lr)
            self.wait = 0
            return True
        return False

    def state(self) -> dict:
        return {"patience": self.patience, "factor": self.factor, "min_lr": self.min_lr,
                "best": self.best, "wait": self.wait}
