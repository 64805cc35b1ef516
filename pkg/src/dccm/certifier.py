"""Finite-grid contraction certificates.

``h(x, u, r)`` is the largest eigenvalue of
``Theta^-T A_cl^T M(x+) A_cl Theta^-1 - I`` with ``M(x) = Theta^T Theta``;
``h <= -lam`` means the closed-loop differential map shrinks the metric by at
least ``1 - lam``. Around each grid point the value can rise by at most
``L * radius`` for a Lipschitz constant ``L``, so a grid whose balls cover the
region certifies it at rate ``min_i(-h_i - L * radius)``. ``L`` is estimated
from the samples, so the certificate is empirical.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import grid_axes
from .dccm_trainer import DccmModel
from .errors import ConfigError, ContractError
from .linalg import cholesky_upper, eigvalsh, solve_upper
from .system_model import PlantModel, jacobians

log = logging.getLogger(__name__)

SAFETY_FACTOR = 1.5
MARGIN = 1e-6


def _h_batch(dccm: DccmModel, model: PlantModel, R, X, U):
    with np.errstate(all="ignore"):
        X1 = model.f(R, X) + np.einsum("...ij,...j->...i", model.g(R, X), U)
        A, B = jacobians(model, R, X, U)
    pk = dccm.pair(X)
    h = h_from_matrices(A, B, pk.K, pk.M, dccm.metric(X1))
    return np.where(np.all(np.isfinite(X1), axis=-1), h, np.nan)


def h_value(net, model: PlantModel, r, x, u) -> float:
    """Largest eigenvalue of the metric-normalized closed-loop contraction map minus one.

    Returns NaN where ``M(x)`` fails the Cholesky (positive-definiteness) test.
    """
    dccm = net if isinstance(net, DccmModel) else DccmModel(net, model.n, model.m)
    r, x, u = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (r, x, u))
    return float(_h_batch(dccm, model, r, x, u)[0])


def h_from_matrices(A, B, K, M_k, M_k1) -> np.ndarray:
    """``h`` from explicit matrices (batched); NaN where ``M_k`` is not PD."""
    Acl = np.asarray(A, dtype=float) + np.asarray(B, dtype=float) @ np.asarray(K, dtype=float)
    theta, ok = cholesky_upper(np.asarray(M_k, dtype=float))
    n = Acl.shape[-1]
    theta_safe = np.where(ok[..., None, None], theta, np.eye(n))
    C = Acl @ solve_upper(theta_safe, np.broadcast_to(np.eye(n), theta.shape))
    S = np.swapaxes(C, -1, -2) @ np.asarray(M_k1, dtype=float) @ C - np.eye(n)
    return np.where(ok, eigvalsh(S)[..., -1], np.nan)


def estimate_lipschitz(h: np.ndarray, steps, safety: float = SAFETY_FACTOR) -> float:
    """Largest axis-neighbour slope ``|dh| / step`` on a rectangular grid, times ``safety``.

    ``h`` has one array axis per grid coordinate and ``steps`` gives the
    spacing along each. Axes with a single sample carry no slope information.
    This samples the true constant from below; the safety factor pads it.
    """
    h = np.asarray(h, dtype=float)
    if h.size < 2:
        raise ContractError("need at least two samples to estimate a Lipschitz constant")
    steps = np.broadcast_to(np.asarray(steps, dtype=float), (h.ndim,))
    slope = 0.0
    for axis in range(h.ndim):
        if h.shape[axis] < 2:
            continue
        d = np.abs(np.diff(h, axis=axis)) / steps[axis]
        if np.any(np.isnan(d)):
            raise ContractError("h must be finite on the grid to estimate a Lipschitz constant")
        slope = max(slope, float(d.max()))
    return safety * slope


@dataclass
class CertGrid:
    """Region of interest and lattice steps for each coordinate group.

    Boxes default to the model's boxes.
    """

    state_step: float | tuple = 0.05
    input_step: float | tuple = 0.1
    param_step: float | tuple = 0.5
    state_box: list | None = None
    input_box: list | None = None
    param_box: list | None = None

    def boxes(self, model: PlantModel):
        pick = lambda b, d: np.asarray(d if b is None else b, dtype=float)  # noqa: E731
        return (pick(self.param_box, model.param_box), pick(self.state_box, model.state_box),
                pick(self.input_box, model.input_box))

    def to_json(self):
        return {k: (np.asarray(v).tolist() if v is not None and not np.isscalar(v) else v)
                for k, v in asdict(self).items()}


@dataclass
class CertificationReport:
    grid: dict
    lambda_target: float
    n_points: int
    h_max: float
    h_min: float
    pointwise_rate_min: float
    lipschitz: float
    covering_radius: float
    admissible_radius: float
    covering_ok: bool
    all_points_meet_target: bool
    certified: bool
    rate_min: float
    beta_equivalent: float
    alpha1: float
    alpha2: float
    G: float
    non_pd_points: int
    uncovered_points: list = field(default_factory=list)
    h_values: np.ndarray | None = None
    axes: list | None = None

    def to_json(self, with_h: bool = False):
        d = {k: v for k, v in asdict(self).items() if k not in ("h_values", "axes")}
        d["uncovered_points"] = d["uncovered_points"][:200]
        d["n_uncovered"] = len(self.uncovered_points)
        d["note"] = ("empirical certificate: Lipschitz constant estimated from grid samples "
                     "with safety factor %.2f; rate_min = min_i(-h_i - L * radius)" % SAFETY_FACTOR)
        if with_h and self.h_values is not None:
            d["h_values"] = self.h_values.tolist()
        return d


def certify_region(net, model: PlantModel, grid: CertGrid, lambda_target: float,
                   safety: float = SAFETY_FACTOR, margin: float = MARGIN) -> CertificationReport:
    """Evaluate ``h`` on a lattice over parameter x state x input and build the covering certificate.

    The grid is certified at ``lambda_target`` when every sample has
    ``h <= -lambda_target`` and the covering radius (half the cell diagonal)
    does not exceed the admissible radius ``(lambda_target - margin) / L``.
    ``rate_min`` is the regional rate ``min_i(-h_i - L * radius)``; it is
    reported whether or not the grid certifies.
    """
    if lambda_target <= 0:
        raise ConfigError("lambda_target must be positive")
    dccm = net if isinstance(net, DccmModel) else DccmModel(net, model.n, model.m)
    rbox, xbox, ubox = grid.boxes(model)
    axes = (grid_axes(rbox, grid.param_step) + grid_axes(xbox, grid.state_step)
            + grid_axes(ubox, grid.input_step))
    ell, n = model.ell, model.n
    mesh = np.meshgrid(*axes, indexing="ij")
    P = np.stack([g.ravel() for g in mesh], axis=-1)
    R, X, U = P[:, :ell], P[:, ell:ell + n], P[:, ell + n:]
    h = _h_batch(dccm, model, R, X, U)
    shape = tuple(len(a) for a in axes)

    steps = np.array([a[1] - a[0] if len(a) > 1 else 0.0 for a in axes])
    non_pd = int(np.isnan(h).sum())
    h_grid = h.reshape(shape)
    if non_pd:
        L = np.inf
    else:
        L = estimate_lipschitz(h_grid, np.where(steps > 0, steps, 1.0), safety) if h.size > 1 else 0.0
    radius = 0.5 * float(np.sqrt(np.sum(steps ** 2)))
    admissible = np.inf if L == 0 else (lambda_target - margin) / L
    meets = h <= -lambda_target
    covering_ok = bool(radius <= admissible)
    rate_min = float(np.nanmin(-h) - (L * radius if radius > 0 else 0.0)) if not non_pd else -np.inf
    certified = bool(np.all(meets) and covering_ok and non_pd == 0)

    # metric bounds over the state samples, input-map bound over (r, x) samples
    xs_axes = grid_axes(xbox, grid.state_step)
    xs = np.stack([g.ravel() for g in np.meshgrid(*xs_axes, indexing="ij")], axis=-1)
    eig = eigvalsh(dccm.metric(xs))
    rs = np.stack([g.ravel() for g in np.meshgrid(*grid_axes(rbox, grid.param_step),
                                                   indexing="ij")], axis=-1)
    RR = np.repeat(rs, len(xs), axis=0)
    XX = np.tile(xs, (len(rs), 1))
    G = float(np.max(np.linalg.norm(model.g(RR, XX), ord=2, axis=(-2, -1))))

    bad = np.flatnonzero(~meets)
    uncovered = [P[i].tolist() + [None if np.isnan(h[i]) else float(h[i])] for i in bad]
    return CertificationReport(
        grid={**grid.to_json(), "shape": list(shape),
              "boxes": {"param": rbox.tolist(), "state": xbox.tolist(), "input": ubox.tolist()}},
        lambda_target=float(lambda_target), n_points=int(h.size),
        h_max=float(np.nanmax(h)) if h.size > non_pd else float("nan"),
        h_min=float(np.nanmin(h)) if h.size > non_pd else float("nan"),
        pointwise_rate_min=float(np.nanmin(-h)) if h.size > non_pd else float("nan"),
        lipschitz=float(L), covering_radius=radius, admissible_radius=float(admissible),
        covering_ok=covering_ok, all_points_meet_target=bool(np.all(meets)),
        certified=certified, rate_min=rate_min, beta_equivalent=rate_min,
        alpha1=float(eig[:, 0].min()), alpha2=float(eig[:, -1].max()), G=G,
        non_pd_points=non_pd, uncovered_points=uncovered, h_values=h_grid, axes=[a.tolist() for a in axes],
    )
