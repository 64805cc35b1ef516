"""Online estimation of the uncertain plant parameter from recent transitions.

A small network maps the measured state to a parameter estimate. Each control
step it is trained on a ring buffer of transitions ``(x_{k-1}, u_{k-1}, x_k)``
against the one-step prediction error, and its output at the current state is
accepted only if it lies inside the parameter box; otherwise the previous
estimate is kept and the network is re-seeded.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .mlp import AdamW, Mlp
from .system_model import PlantModel


class HistoryBuffer(deque):
    """Ring buffer of consecutive closed-loop transitions."""

    def __init__(self, capacity: int = 20):
        if capacity < 1:
            raise ConfigError("history capacity must be >= 1")
        super().__init__(maxlen=capacity)

    def push(self, x_prev, u_prev, x):
        self.append((np.asarray(x_prev, dtype=float).copy(), np.asarray(u_prev, dtype=float).copy(),
                     np.asarray(x, dtype=float).copy()))

    def arrays(self):
        xp, up, xn = zip(*self)
        return np.array(xp), np.array(up), np.array(xn)


@dataclass
class EstimatorConfig:
    learning_rate: float = 0.00025
    hidden: tuple = (4,)
    eps_ol: float = 1e-6
    max_iterations: int = 50
    history: int = 20
    fd_step: float = 1e-6
    beta1: float = 0.1
    beta2: float = 0.9
    weight_decay: float = 0.5

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.eps_ol > 0:
            raise ConfigError("eps_ol must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")


def _prediction_errors(model: PlantModel, r_hat, x_prev, u_prev, x):
    pred = model.f(r_hat, x_prev) + np.einsum("...ij,...j->...i", model.g(r_hat, x_prev), u_prev)
    return np.linalg.norm(x - pred, axis=-1)


def online_loss(model: PlantModel, r_hat, record) -> float:
    """Euclidean norm of the one-step prediction error under ``r_hat``."""
    x_prev, u_prev, x = (np.asarray(a, dtype=float) for a in record)
    return float(_prediction_errors(model, np.asarray(r_hat, dtype=float), x_prev, u_prev, x))


class ParameterEstimator:
    def __init__(self, model: PlantModel, cfg: EstimatorConfig | None = None,
                 r_init=None, seed: int = 0):
        self.model = model
        self.cfg = cfg or EstimatorConfig()
        self.seed = seed
        self.reinitializations = 0
        r_init = model.param_box.mean(axis=1) if r_init is None else np.asarray(r_init, dtype=float)
        self.r_prev = np.atleast_1d(r_init).astype(float)
        self.last_losses: list[float] = []
        self._fresh_network(anchor_x=None)

    def _fresh_network(self, anchor_x):
        seed = self.seed + 7919 * self.reinitializations
        self.net = Mlp([self.model.n, *self.cfg.hidden, self.model.ell], seed=seed)
        self.opt = AdamW(self.cfg.learning_rate, self.cfg.beta1, self.cfg.beta2, self.cfg.weight_decay)
        self._anchored = False
        if anchor_x is not None:
            self.anchor(anchor_x)

    def anchor(self, x):
        """Shift the output bias so the network reproduces the current estimate at ``x``."""
        self.net.biases[-1] += self.r_prev - self.net(np.asarray(x, dtype=float))
        self._anchored = True

    def loss_terms(self, buffer: HistoryBuffer):
        x_prev, u_prev, x = buffer.arrays()
        r_hat = self.net(x_prev)
        return _prediction_errors(self.model, r_hat, x_prev, u_prev, x)

    def update_estimate(self, buffer: HistoryBuffer, x_k) -> np.ndarray:
        """One control step of online learning; returns the accepted estimate."""
        x_k = np.asarray(x_k, dtype=float)
        if not self._anchored:
            self.anchor(x_k)
        self.last_losses = []
        if len(buffer):
            x_prev, u_prev, x = buffer.arrays()
            h = self.cfg.fd_step
            for _ in range(self.cfg.max_iterations):
                r_hat, cache = self.net.forward(x_prev, cache=True)
                losses = _prediction_errors(self.model, r_hat, x_prev, u_prev, x)
                self.last_losses.append(float(losses.sum()))
                if losses.max() < self.cfg.eps_ol:
                    break
                dl = np.zeros_like(r_hat)
                for j in range(self.model.ell):
                    e = np.zeros(self.model.ell)
                    e[j] = h
                    dl[:, j] = (_prediction_errors(self.model, r_hat + e, x_prev, u_prev, x)
                                - _prediction_errors(self.model, r_hat - e, x_prev, u_prev, x)) / (2 * h)
                grads, _ = self.net.backward(dl, cache)
                self.opt.step(self.net, grads)
        r_new = np.atleast_1d(self.net(x_k))
        box = self.model.param_box
        if np.all(np.isfinite(r_new)) and np.all(r_new >= box[:, 0]) and np.all(r_new <= box[:, 1]):
            self.r_prev = r_new
            return r_new.copy()
        self.reinitializations += 1
        self._fresh_network(anchor_x=x_k)
        return self.r_prev.copy()
