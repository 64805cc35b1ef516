"""Geodesic-integrated feedback law and the residual tracking bound."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geodesic import GeodesicConfig, GeodesicPath, _make_path, compute_geodesic, straight_path

log = logging.getLogger(__name__)


@dataclass
class ControlDecision:
    u: np.ndarray
    u_raw: np.ndarray
    geodesic: GeodesicPath
    d_geo: float
    saturated: bool
    fallback: bool = False


def integrate_gain(gain, path: GeodesicPath) -> np.ndarray:
    """``sum_i K(node_i) v_i ds_i`` along the path as stored (``x`` to ``x*``)."""
    K = np.asarray(gain(path.nodes[:-1]), dtype=float)
    return np.einsum("nij,nj,n->i", K, path.displacements, path.ds)


def feedback_control(dccm, x, x_star, u_star, N: int = 10, input_box=None,
                     cfg: GeodesicConfig | None = None) -> ControlDecision:
    """Feed-forward plus the differential gain integrated along the geodesic.

    The path runs from ``x`` to ``x*``; the feedback term is integrated in the
    opposite sense (from ``x*`` to ``x``) so that a constant gain ``K0`` gives
    ``u = u* + K0 (x - x*)``, the same sign under which ``A + B K`` was trained
    to contract.
    """
    x, x_star = np.asarray(x, dtype=float), np.asarray(x_star, dtype=float)
    u_star = np.atleast_1d(np.asarray(u_star, dtype=float))
    metric = dccm if hasattr(dccm, "quad_and_grad") else dccm.metric
    fallback = False
    try:
        path = compute_geodesic(metric, x, x_star, N, cfg)
        if not np.all(np.isfinite(path.nodes)):
            raise FloatingPointError("non-finite geodesic nodes")
    except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        log.warning("geodesic solve failed (%s); using straight line", exc)
        path = _make_path(straight_path(x, x_star, N), dccm.metric, None, converged=False)
        fallback = True
    u_raw = u_star - integrate_gain(dccm.gain, path)
    u = u_raw
    saturated = False
    if input_box is not None:
        box = np.asarray(input_box, dtype=float)
        u = np.clip(u_raw, box[:, 0], box[:, 1])
        saturated = bool(np.any(u != u_raw))
    return ControlDecision(u, u_raw, path, path.length, saturated, fallback)


class TrackingBound(NamedTuple):
    radius: float
    bounded: bool


def tracking_bound(alpha2: float, G: float, u_tilde_norm: float, beta: float) -> TrackingBound:
    """Fixed point of ``d+ = sqrt(1-beta) d + sqrt(alpha2) G |u~|``."""
    if alpha2 < 0 or G < 0 or u_tilde_norm < 0:
        raise ValueError("alpha2, G and |u~| must be non-negative")
    drive = math.sqrt(alpha2) * G * u_tilde_norm
    if beta <= 0:
        return TrackingBound(math.inf if drive > 0 else 0.0, drive == 0)
    return TrackingBound(drive / (1.0 - math.sqrt(1.0 - min(beta, 1.0))), True)
