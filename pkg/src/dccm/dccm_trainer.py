"""Learning a discrete-time control contraction metric and differential gain.

The network maps a state ``x`` to ``n(n+1)/2 + m n`` numbers: the lower
triangle of the metric ``M(x)`` (row-major) followed by the gain ``K(x)``
(row-major). Training evaluates it twice per record, at ``x_k`` and at
``x_{k+1}`` with shared weights, and penalizes leading principal minors of
``M_k`` and of the contraction residual ``Omega`` that fall below a margin.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, ContractError
from .linalg import eigvalsh, leading_minor_grads, leading_minors, sym
from .mlp import AdamW, Mlp

log = logging.getLogger(__name__)


def n_outputs(n: int, m: int) -> int:
    return n * (n + 1) // 2 + m * n


def _tril(n):
    return np.tril_indices(n)


@dataclass
class DccmPair:
    M: np.ndarray
    K: np.ndarray


def decode(raw, n: int, m: int) -> DccmPair:
    """Raw output vector(s) ``(..., n(n+1)/2 + m n)`` to symmetric ``M`` and ``K``."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != n_outputs(n, m):
        raise ContractError(f"raw length {raw.shape[-1]} != {n_outputs(n, m)} for n={n}, m={m}")
    t = n * (n + 1) // 2
    rows, cols = _tril(n)
    M = np.zeros(raw.shape[:-1] + (n, n))
    M[..., rows, cols] = raw[..., :t]
    M[..., cols, rows] = raw[..., :t]
    K = raw[..., t:].reshape(raw.shape[:-1] + (m, n))
    return DccmPair(M, K)


def encode(pair: DccmPair) -> np.ndarray:
    n = pair.M.shape[-1]
    rows, cols = _tril(n)
    lead = pair.M.shape[:-2]
    return np.concatenate([pair.M[..., rows, cols], pair.K.reshape(lead + (-1,))], axis=-1)


def raw_grad_from_M(G: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. the full symmetric ``M`` back onto its lower triangle."""
    n = G.shape[-1]
    rows, cols = _tril(n)
    return np.where(rows == cols, G[..., rows, cols], G[..., rows, cols] + G[..., cols, rows])


def omega(A, B, K, M_k, M_k1, beta: float) -> np.ndarray:
    """Contraction residual ``-(A+BK)^T M_k1 (A+BK) + (1-beta) M_k`` (symmetrized)."""
    A, B, K = (np.asarray(a, dtype=float) for a in (A, B, K))
    M_k, M_k1 = np.asarray(M_k, dtype=float), np.asarray(M_k1, dtype=float)
    n = A.shape[-1]
    if (A.shape[-2:] != (n, n) or M_k.shape[-2:] != (n, n) or M_k1.shape[-2:] != (n, n)
            or B.shape[-2] != n or K.shape[-2:] != (B.shape[-1], n)):
        raise ContractError("omega: inconsistent dimensions "
                            f"A{A.shape} B{B.shape} K{K.shape} M{M_k.shape} M+{M_k1.shape}")
    Acl = A + B @ K
    return sym(-np.swapaxes(Acl, -1, -2) @ M_k1 @ Acl + (1.0 - beta) * M_k)


@dataclass
class TrainConfig:
    beta: float = 0.1
    eps_minor: float = 1e-4
    eps_min: float = 1e-6
    max_iterations: int = 5000
    learning_rate: float = 0.05
    hidden: tuple = (10, 10, 10)
    beta1: float = 0.1
    beta2: float = 0.9
    weight_decay: float = 0.5
    include_out_of_box: bool = True
    batch_size: int = 0  # 0 = full batch
    monitor_window: int = 100
    log_every: int = 100

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 < self.beta <= 1:
            raise ConfigError("beta must lie in (0, 1]")
        if not self.eps_minor > 0:
            raise ConfigError("eps_minor must be positive")
        if self.eps_min > self.eps_minor:
            raise ConfigError("eps_min must not exceed eps_minor")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be non-negative")


class DccmModel:
    """Wraps a trained network as metric and gain fields over the state space."""

    def __init__(self, net: Mlp, n: int, m: int):
        if net.n_in != n or net.n_out != n_outputs(n, m):
            raise ContractError(
                f"network {net.layer_sizes} does not match n={n}, m={m} "
                f"(needs input {n}, output {n_outputs(n, m)})")
        self.net, self.n, self.m = net, n, m

    def pair(self, x) -> DccmPair:
        return decode(self.net(np.asarray(x, dtype=float)), self.n, self.m)

    def metric(self, x) -> np.ndarray:
        return self.pair(x).M

    __call__ = metric

    def gain(self, x) -> np.ndarray:
        return self.pair(x).K

    def quad_and_grad(self, X, V):
        """``q_i = v_i^T M(x_i) v_i`` and ``dq_i/dx_i`` for row batches."""
        raw, cache = self.net.forward(np.atleast_2d(X), cache=True)
        M = decode(raw, self.n, self.m).M
        q = np.einsum("ni,nij,nj->n", V, M, V)
        up = np.zeros_like(raw)
        up[:, : self.n * (self.n + 1) // 2] = raw_grad_from_M(V[:, :, None] * V[:, None, :])
        _, dX = self.net.backward(up, cache)
        return q, dX, M


def _hinge(minors, eps):
    return np.maximum(0.0, eps - minors)


def batch_loss(net: Mlp, x_k, x_k1, A, B, cfg: TrainConfig, n: int, m: int, need_grad=True):
    """Per-element Siamese loss and the gradient of their (finite) sum.

    Returns ``(losses, grads)``; ``grads`` is None when ``need_grad`` is False.
    """
    N = len(x_k)
    X = np.concatenate([x_k, x_k1], axis=0)
    raw, cache = net.forward(X, cache=True)
    pk = decode(raw[:N], n, m)
    M_k, K_k = pk.M, pk.K
    M_k1 = decode(raw[N:], n, m).M
    Acl = A + B @ K_k
    Om = sym(-np.swapaxes(Acl, -1, -2) @ M_k1 @ Acl + (1.0 - cfg.beta) * M_k)
    mM = leading_minors(M_k)
    mO = leading_minors(Om)
    losses = _hinge(mM, cfg.eps_minor).sum(axis=1) + _hinge(mO, cfg.eps_minor).sum(axis=1)
    if not need_grad:
        return losses, None
    good = np.isfinite(losses)
    wM = -((mM < cfg.eps_minor) & good[:, None]).astype(float)
    wO = -((mO < cfg.eps_minor) & good[:, None]).astype(float)
    G_O = sym(leading_minor_grads(Om, wO))
    G_Mk = leading_minor_grads(M_k, wM) + (1.0 - cfg.beta) * G_O
    G_Mk1 = -Acl @ G_O @ np.swapaxes(Acl, -1, -2)
    G_Acl = -2.0 * M_k1 @ Acl @ G_O
    G_K = np.swapaxes(B, -1, -2) @ G_Acl
    up = np.zeros_like(raw)
    t = n * (n + 1) // 2
    up[:N, :t] = raw_grad_from_M(G_Mk)
    up[:N, t:] = G_K.reshape(N, -1)
    up[N:, :t] = raw_grad_from_M(G_Mk1)
    up[~np.isfinite(up)] = 0.0
    grads, _ = net.backward(up, cache)
    return losses, grads


def element_loss(elem, net: Mlp, cfg: TrainConfig):
    """Loss of a single record ``{x_k, x_k1, A, B}`` and its parameter gradient."""
    n = len(elem["x_k"])
    B = np.asarray(elem["B"], dtype=float).reshape(n, -1)
    m = B.shape[1]
    if net.n_out != n_outputs(n, m):
        raise ContractError(f"network output {net.n_out} != {n_outputs(n, m)}")
    losses, grads = batch_loss(net, np.atleast_2d(elem["x_k"]), np.atleast_2d(elem["x_k1"]),
                               np.asarray(elem["A"], dtype=float).reshape(1, n, n), B[None],
                               cfg, n, m)
    return float(losses[0]), grads


@dataclass
class TrainReport:
    converged: bool
    iterations: int
    final_loss: float
    best_loss: float
    loss_history: list = field(default_factory=list)
    lr_halvings: list = field(default_factory=list)
    skipped_elements: int = 0
    elapsed_s: float = 0.0
    n_elements: int = 0

    def to_json(self):
        return asdict(self)


def _dataset_arrays(ds: Dataset, cfg: TrainConfig):
    mask = np.ones(len(ds), dtype=bool) if cfg.include_out_of_box else ~ds.out_of_box
    return (np.ascontiguousarray(ds.x_k[mask]), np.ascontiguousarray(ds.x_k1[mask]),
            np.ascontiguousarray(ds.A[mask]), np.ascontiguousarray(ds.B[mask]))


def _total_grad(net, arrays, cfg, n, m):
    x_k, x_k1, A, B = arrays
    N = len(x_k)
    bs = cfg.batch_size or N
    total, grads, bad = 0.0, None, 0
    for s in range(0, N, bs):
        sl = slice(s, s + bs)
        losses, g = batch_loss(net, x_k[sl], x_k1[sl], A[sl], B[sl], cfg, n, m)
        good = np.isfinite(losses)
        bad += int((~good).sum())
        total += float(losses[good].sum())
        grads = g if grads is None else [a + b for a, b in zip(grads, g)]
    return total, grads, bad


def train_dccm(ds: Dataset, cfg: TrainConfig, seed: int = 0, net: Mlp | None = None):
    """Full-batch Siamese training until the total loss drops below ``eps_min``.

    Returns ``(net, report)``. When the iteration budget runs out the network
    with the lowest total loss seen is returned and ``report.converged`` is
    False.
    """
    if len(ds) == 0:
        raise ContractError("cannot train on an empty dataset")
    n, m = ds.n, ds.m
    if net is None:
        net = Mlp([n, *cfg.hidden, n_outputs(n, m)], seed=seed)
    arrays = _dataset_arrays(ds, cfg)
    opt = AdamW(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.weight_decay)
    history, halvings = [], []
    best_loss, best_flat = np.inf, net.get_flat()
    t0 = time.perf_counter()
    converged, it, bad = False, 0, 0
    for it in range(cfg.max_iterations + 1):
        total, grads, bad = _total_grad(net, arrays, cfg, n, m)
        history.append(total)
        if total < best_loss:
            best_loss, best_flat = total, net.get_flat()
        if total < cfg.eps_min:
            converged = True
            break
        if it == cfg.max_iterations:
            break
        w = cfg.monitor_window
        if w and len(history) >= 2 * w and len(history) % w == 0:
            if np.mean(history[-w:]) > np.mean(history[-2 * w:-w]):
                opt.learning_rate *= 0.5
                halvings.append((it, opt.learning_rate))
                log.info("iter %d: loss rising over window, learning rate -> %.3g", it, opt.learning_rate)
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %d: total loss %.6g", it, total)
        opt.step(net, grads)
    if not converged:
        net.set_flat(best_flat)
    report = TrainReport(converged, it, history[-1], float(best_loss), history, halvings, bad,
                         time.perf_counter() - t0, len(arrays[0]))
    return net, report


@dataclass
class VerificationReport:
    fraction_pd: float
    fraction_above_eps: float
    worst_min_eigenvalue: float
    worst_min_eig_M: float
    worst_min_eig_omega: float
    failing: list

    def to_json(self):
        d = asdict(self)
        d["failing"] = d["failing"][:100]
        d["n_failing"] = len(self.failing)
        return d


def verify_contraction(net: Mlp, ds: Dataset, cfg: TrainConfig) -> VerificationReport:
    """Eigenvalue check of ``M_k > 0`` and ``Omega > 0`` on every record."""
    n, m = ds.n, ds.m
    model = DccmModel(net, n, m)
    pk = model.pair(ds.x_k)
    M_k1 = model.metric(ds.x_k1)
    Om = omega(ds.A, ds.B, pk.K, pk.M, M_k1, cfg.beta)
    eM = eigvalsh(pk.M)[:, 0]
    eO = eigvalsh(Om)[:, 0]
    worst = np.minimum(eM, eO)
    ok = worst > 0
    above = (eM > cfg.eps_minor) & (eO > cfg.eps_minor)
    return VerificationReport(float(ok.mean()), float(above.mean()), float(worst.min()),
                              float(eM.min()), float(eO.min()), np.flatnonzero(~ok).tolist())
