"""Uncertain discrete-time control-affine plants.

A plant is ``x_{k+1} = f(r, x_k) + g(r, x_k) u_k`` with an uncertain parameter
vector ``r`` confined to a box. All evaluators broadcast over leading batch
axes: ``r`` is ``(..., ell)``, ``x`` is ``(..., n)`` and ``u`` is ``(..., m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ContractError, NumericOverflowError

FD_STEP = 1e-6

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _as_box(box, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(box, dtype=float))
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigError(f"{name} must be a list of [min, max] pairs")
    if not np.all(arr[:, 0] < arr[:, 1]):
        raise ConfigError(f"{name} requires min < max in every dimension: {arr.tolist()}")
    return arr


@dataclass(frozen=True)
class PlantModel:
    """Control-affine plant with box bounds on state, input and parameter.

    ``jac_x`` is optional; when omitted the state Jacobian of the one-step map
    is taken by central finite differences with step ``FD_STEP``.
    """

    name: str
    n: int
    m: int
    ell: int
    state_box: np.ndarray
    input_box: np.ndarray
    param_box: np.ndarray
    f: Evaluator
    g: Evaluator
    jac_x: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for attr, dim in (("state_box", self.n), ("input_box", self.m), ("param_box", self.ell)):
            box = _as_box(getattr(self, attr), attr)
            if box.shape[0] != dim:
                raise ConfigError(f"{attr} has {box.shape[0]} rows, expected {dim}")
            box.setflags(write=False)
            object.__setattr__(self, attr, box)


def _check_args(model: PlantModel, r, x, u=None):
    r = np.asarray(r, dtype=float)
    x = np.asarray(x, dtype=float)
    if r.shape[-1:] != (model.ell,):
        raise ContractError(f"parameter has trailing dim {r.shape[-1:]}, expected ({model.ell},)")
    if x.shape[-1:] != (model.n,):
        raise ContractError(f"state has trailing dim {x.shape[-1:]}, expected ({model.n},)")
    if u is not None:
        u = np.asarray(u, dtype=float)
        if u.shape[-1:] != (model.m,):
            raise ContractError(f"input has trailing dim {u.shape[-1:]}, expected ({model.m},)")
    return r, x, u


def _finite_or_raise(value: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NumericOverflowError(f"{what} produced a non-finite value")
    return value


def _raw_step(model: PlantModel, r, x, u) -> np.ndarray:
    return model.f(r, x) + np.einsum("...ij,...j->...i", model.g(r, x), u)


def step(model: PlantModel, r, x, u) -> np.ndarray:
    """One step of the plant. Never clamps to the state box."""
    r, x, u = _check_args(model, r, x, u)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = _raw_step(model, r, x, u)
    return _finite_or_raise(out, f"{model.name}.step")


def input_matrix(model: PlantModel, r, x) -> np.ndarray:
    r, x, _ = _check_args(model, r, x)
    return _finite_or_raise(model.g(r, x), f"{model.name}.g")


def fd_state_jacobian(model: PlantModel, r, x, u, h: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of the one-step map with respect to x."""
    r, x, u = _check_args(model, r, x, u)
    cols = []
    for j in range(model.n):
        e = np.zeros(model.n)
        e[j] = h
        cols.append((_raw_step(model, r, x + e, u) - _raw_step(model, r, x - e, u)) / (2 * h))
    return np.stack(cols, axis=-1)


def jacobians(model: PlantModel, r, x, u) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A, B)`` = Jacobians of the one-step map w.r.t. ``x`` and ``u``.

    For a control-affine plant ``B`` is exactly ``g(r, x)``.
    """
    r, x, u = _check_args(model, r, x, u)
    if model.jac_x is not None:
        A = model.jac_x(r, x, u)
    else:
        A = fd_state_jacobian(model, r, x, u)
    A = _finite_or_raise(np.asarray(A, dtype=float), f"{model.name}.jacobian")
    B = _finite_or_raise(model.g(r, x), f"{model.name}.g")
    return A, B


# ---------------------------------------------------------------------------
# CSTR instance


@dataclass(frozen=True)
class CstrParams:
    Da1: float = 1.25
    Da2: float = 2.5
    zeta: float = 0.1
    alpha: float = 0.8
    B_range: tuple = (1.0, 3.0)
    B_true: float = 1.0
    # Multiplier on u in the temperature row; 1.0 is the model as printed.
    input_gain: float = 1.0


def make_cstr(params: CstrParams | None = None,
              state_box=((0.1, 1.1), (0.1, 1.1)),
              input_box=((-1.0, 1.0),)) -> PlantModel:
    """Two-state CSTR: normalized concentration ``x1``, reactor temperature
    ``x2``, jacket temperature input ``u`` and uncertain heat parameter ``B``.
    """
    p = params or CstrParams()
    if not p.B_range[0] <= p.B_true <= p.B_range[1]:
        raise ConfigError("B_true must lie inside B_range")

    def arrhenius(x2):
        return np.exp(p.alpha * x2 / (p.alpha + x2))

    def f(r, x):
        x1, x2 = x[..., 0], x[..., 1]
        B = r[..., 0]
        e = arrhenius(x2)
        return np.stack([
            0.9 * x1 + 0.1 * p.Da1 * (1 - x1) * e + 0.1 * (1 - p.zeta) * x1,
            0.9 * x2 + 0.1 * B * p.Da2 * (1 - x1) * e,
        ], axis=-1)

    def g(r, x):
        shape = np.broadcast_shapes(np.shape(r)[:-1], np.shape(x)[:-1])
        out = np.zeros(shape + (2, 1))
        out[..., 1, 0] = p.input_gain
        return out

    def jac_x(r, x, u):
        x1, x2 = x[..., 0], x[..., 1]
        B = r[..., 0]
        e = arrhenius(x2)
        de = e * p.alpha ** 2 / (p.alpha + x2) ** 2
        a11 = 0.9 - 0.1 * p.Da1 * e + 0.1 * (1 - p.zeta)
        a12 = 0.1 * p.Da1 * (1 - x1) * de
        a21 = -0.1 * B * p.Da2 * e
        a22 = 0.9 + 0.1 * B * p.Da2 * (1 - x1) * de
        a11, a12, a21, a22 = np.broadcast_arrays(a11, a12, a21, a22)
        return np.stack([np.stack([a11, a12], -1), np.stack([a21, a22], -1)], -2)

    return PlantModel(
        name="cstr", n=2, m=1, ell=1,
        state_box=np.array(state_box, dtype=float),
        input_box=np.array(input_box, dtype=float),
        param_box=np.array([p.B_range], dtype=float),
        f=f, g=g, jac_x=jac_x,
        meta={"params": p, "r_true": np.array([p.B_true])},
    )


def make_linear(A0, B0, state_box, input_box, param_box=((0.0, 1.0),), name="linear") -> PlantModel:
    """``x_{k+1} = A0 x + B0 u``; the parameter is a dummy coordinate."""
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    B0 = np.asarray(B0, dtype=float).reshape(A0.shape[0], -1)
    n, m = B0.shape
    param_box = np.atleast_2d(np.asarray(param_box, dtype=float))

    def f(r, x):
        return np.einsum("ij,...j->...i", A0, x) + 0.0 * r[..., :1]

    def g(r, x):
        shape = np.broadcast_shapes(np.shape(r)[:-1], np.shape(x)[:-1])
        return np.broadcast_to(B0, shape + B0.shape).copy()

    def jac_x(r, x, u):
        shape = np.broadcast_shapes(np.shape(r)[:-1], np.shape(x)[:-1])
        return np.broadcast_to(A0, shape + A0.shape).copy()

    return PlantModel(name=name, n=n, m=m, ell=param_box.shape[0],
                      state_box=np.atleast_2d(np.asarray(state_box, dtype=float)),
                      input_box=np.atleast_2d(np.asarray(input_box, dtype=float)),
                      param_box=param_box, f=f, g=g, jac_x=jac_x,
                      meta={"A0": A0, "B0": B0, "r_true": param_box[:, 0].copy()})


def scalar_unstable_plant() -> PlantModel:
    """``x_{k+1} = 2 x + u`` on ``x in [-1, 1]``, ``u in [-3, 3]``."""
    return make_linear([[2.0]], [[1.0]], state_box=[[-1.0, 1.0]], input_box=[[-3.0, 3.0]],
                       name="scalar2")


MODELS = {"cstr": make_cstr, "scalar2": scalar_unstable_plant}


def build_model(name: str, overrides: dict | None = None) -> PlantModel:
    """Look up a model by name, applying numeric overrides (CSTR only)."""
    overrides = dict(overrides or {})
    if name == "cstr":
        fields = CstrParams.__dataclass_fields__
        unknown = set(overrides) - set(fields) - {"state_box", "input_box"}
        if unknown:
            raise ConfigError(f"unknown cstr overrides: {sorted(unknown)}")
        boxes = {k: overrides.pop(k) for k in ("state_box", "input_box") if k in overrides}
        if "B_range" in overrides:
            overrides["B_range"] = tuple(overrides["B_range"])
        return make_cstr(CstrParams(**overrides), **boxes)
    if name == "scalar2":
        if overrides:
            raise ConfigError("scalar2 takes no overrides")
        return scalar_unstable_plant()
    raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODELS)}")
