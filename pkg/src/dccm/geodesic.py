"""Discrete geodesics and Riemannian lengths under a state-dependent metric.

A path joins ``x`` to ``x_star`` through ``N + 1`` nodes. Segment ``i`` has
parameter width ``ds[i]`` and velocity ``v_i = (node[i+1] - node[i]) / ds[i]``;
the metric is sampled at the segment's left node. The discrete energy is
``sum_i v_i^T M(node_i) v_i ds_i`` and the length is
``sum_i sqrt(v_i^T M(node_i) v_i) ds_i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .linalg import cholesky_upper, sym

log = logging.getLogger(__name__)


@dataclass
class GeodesicPath:
    nodes: np.ndarray
    displacements: np.ndarray
    ds: np.ndarray
    energy: float
    length: float
    converged: bool = True
    iterations: int = 0
    non_pd_nodes: int = 0


@dataclass(frozen=True)
class GeodesicConfig:
    segments: int = 10
    max_iterations: int = 200
    rel_tol: float = 1e-8
    armijo: float = 1e-4
    fd_step: float = 1e-6


def _metric_batch(metric, X):
    return np.asarray(metric(np.atleast_2d(X)), dtype=float)


def _quad_and_grad(metric, X, V, h):
    """``q_i = v_i^T M(x_i) v_i`` with its gradient in ``x_i`` (explicit term)."""
    if hasattr(metric, "quad_and_grad"):
        return metric.quad_and_grad(X, V)
    M = _metric_batch(metric, X)
    q = np.einsum("ni,nij,nj->n", V, M, V)
    dq = np.zeros_like(X)
    for j in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[j] = h
        qp = np.einsum("ni,nij,nj->n", V, _metric_batch(metric, X + e), V)
        qm = np.einsum("ni,nij,nj->n", V, _metric_batch(metric, X - e), V)
        dq[:, j] = (qp - qm) / (2 * h)
    return q, dq, M


def path_from_nodes(nodes, ds=None) -> tuple[np.ndarray, np.ndarray]:
    nodes = np.asarray(nodes, dtype=float)
    N = len(nodes) - 1
    ds = np.full(N, 1.0 / N) if ds is None else np.asarray(ds, dtype=float)
    return (nodes[1:] - nodes[:-1]) / ds[:, None], ds


def straight_path(x, x_star, N: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, N + 1)[:, None]
    x, x_star = np.asarray(x, dtype=float), np.asarray(x_star, dtype=float)
    nodes = x + s * (x_star - x)
    nodes[0], nodes[-1] = x, x_star
    return nodes


def path_energy(nodes, metric, ds=None) -> float:
    V, ds = path_from_nodes(nodes, ds)
    M = _metric_batch(metric, nodes[:-1])
    return float(np.sum(np.einsum("ni,nij,nj->n", V, M, V) * ds))


def riemannian_length(path: GeodesicPath, metric) -> float:
    """Discrete Riemannian length of a path; negative quadratic forms clamp to 0."""
    M = _metric_batch(metric, path.nodes[:-1])
    q = np.einsum("ni,nij,nj->n", path.displacements, M, path.displacements)
    if np.any(q < 0):
        log.debug("metric not positive along path; clamping %d quadratic forms", int((q < 0).sum()))
    return float(np.sum(np.sqrt(np.maximum(q, 0.0)) * path.ds))


def _make_path(nodes, metric, ds, converged=True, iterations=0) -> GeodesicPath:
    V, ds = path_from_nodes(nodes, ds)
    M = _metric_batch(metric, nodes[:-1])
    q = np.einsum("ni,nij,nj->n", V, M, V)
    _, ok = cholesky_upper(M)
    return GeodesicPath(nodes, V, ds, float(np.sum(q * ds)),
                        float(np.sum(np.sqrt(np.maximum(q, 0.0)) * ds)),
                        converged, iterations, int((~ok).sum()))


def compute_geodesic(metric, x, x_star, N: int = 10, cfg: GeodesicConfig | None = None) -> GeodesicPath:
    """Minimize the discrete path energy over interior nodes, endpoints pinned.

    Starts from the straight line and takes gradient steps preconditioned by
    the path Laplacian scaled with the mean metric (exact Newton step for a
    constant metric), with Armijo backtracking. ``metric`` is either a
    callable returning ``(batch, n, n)`` metrics or an object that also
    exposes ``quad_and_grad(X, V)``; plain callables are differentiated by
    central differences.
    """
    cfg = cfg or GeodesicConfig()
    if N < 2:
        raise ContractError("geodesic needs at least 2 segments")
    x, x_star = np.asarray(x, dtype=float), np.asarray(x_star, dtype=float)
    if x.shape != x_star.shape or x.ndim != 1:
        raise ContractError("endpoints must be vectors of equal length")
    ds = np.full(N, 1.0 / N)
    nodes = straight_path(x, x_star, N)
    if np.array_equal(x, x_star):
        return _make_path(nodes, metric, ds)

    h = ds[0]
    lap = (2.0 * np.eye(N - 1) - np.eye(N - 1, k=1) - np.eye(N - 1, k=-1)) * (2.0 / h)
    lap_inv = np.linalg.inv(lap)

    def energy_grad(nodes):
        V = (nodes[1:] - nodes[:-1]) / h
        q, dq, M = _quad_and_grad(metric, nodes[:-1], V, cfg.fd_step)
        MV = np.einsum("nij,nj->ni", M, V)
        g = h * dq[1:] - 2.0 * MV[1:] + 2.0 * MV[:-1]
        return float(np.sum(q) * h), g, M

    E, g, M = energy_grad(nodes)
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        Mbar = sym(M.mean(axis=0))
        _, ok = cholesky_upper(Mbar)
        direction = -lap_inv @ g
        if ok:
            direction = direction @ np.linalg.inv(Mbar)
        slope = float(np.sum(direction * g))
        if slope >= 0:
            direction, slope = -g, -float(np.sum(g * g))
        if slope == 0.0:
            converged = True
            break
        t = 1.0
        while True:
            trial = nodes.copy()
            trial[1:-1] += t * direction
            E_new = path_energy(trial, metric, ds)
            if E_new <= E + cfg.armijo * t * slope or t < 1e-12:
                break
            t *= 0.5
        if not E_new < E:
            converged = True
            break
        improvement = (E - E_new) / max(abs(E), np.finfo(float).tiny)
        nodes = trial
        E, g, M = energy_grad(nodes)
        if improvement < cfg.rel_tol:
            converged = True
            break
    return _make_path(nodes, metric, ds, converged, it)
