"""Plain-numpy optimizers. Both keep per-parameter state keyed by name and
return fresh parameter arrays from step(); inputs are never mutated."""

import numpy as np

from .errors import ConfigError, DimensionError


class SGDMomentum:
    """Classical momentum with L2 regularization folded into the gradient:

        v <- mu * v + (g + wd * theta)
        theta <- theta - lr * v
    """

    kind = "sgd"

    def __init__(self, lr=0.015, momentum=0.9, weight_decay=1e-4):
        if lr < 0:
            raise ConfigError(f"lr must be >= 0, got {lr}")
        if not 0 <= momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {weight_decay}")
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = {}

    def step(self, params, grads):
        out = {}
        for name, theta in params.items():
            g = grads.get(name)
            if g is None:
                out[name] = theta
                continue
            if g.shape != theta.shape:
                raise DimensionError(
                    f"gradient for {name!r} has shape {g.shape}, "
                    f"parameter is {theta.shape}"
                )
            dt = theta.dtype.type
            g = g + dt(self.weight_decay) * theta
            v = self._velocity.get(name)
            v = g if v is None else dt(self.momentum) * v + g
            self._velocity[name] = v
            out[name] = theta - dt(self.lr) * v
        return out

    def state_size(self):
        return sum(v.size for v in self._velocity.values())


class Adam:
    """Adam with bias correction. The step counter is shared across all
    parameters and advances once per step() call."""

    kind = "adam"

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        if lr < 0:
            raise ConfigError(f"lr must be >= 0, got {lr}")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ConfigError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        if eps <= 0:
            raise ConfigError(f"eps must be > 0, got {eps}")
        if weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {weight_decay}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, params, grads):
        self.t += 1
        out = {}
        for name, theta in params.items():
            g = grads.get(name)
            if g is None:
                out[name] = theta
                continue
            if g.shape != theta.shape:
                raise DimensionError(
                    f"gradient for {name!r} has shape {g.shape}, "
                    f"parameter is {theta.shape}"
                )
            dt = theta.dtype.type
            if self.weight_decay:
                g = g + dt(self.weight_decay) * theta
            m = self._m.get(name)
            v = self._v.get(name)
            b1, b2 = dt(self.beta1), dt(self.beta2)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self._m[name] = m
            self._v[name] = v
            mhat = m / dt(1 - self.beta1 ** self.t)
            vhat = v / dt(1 - self.beta2 ** self.t)
            out[name] = theta - dt(self.lr) * mhat / (np.sqrt(vhat)
                                                      + dt(self.eps))
        return out

    def state_size(self):
        return sum(v.size for v in self._m.values()) * 2
