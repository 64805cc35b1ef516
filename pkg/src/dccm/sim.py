"""Closed-loop simulation of the contraction controller with online learning."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .controller import feedback_control
from .dccm_trainer import DccmModel
from .errors import ConfigError, DccmError, ParseError
from .geodesic import GeodesicConfig
from .param_estimator import EstimatorConfig, HistoryBuffer, ParameterEstimator
from .reference import (CSTR_SCHEDULE, SetpointSchedule, equilibrium_schedule, reference_at,
                        solve_reference_input)
from .system_model import PlantModel, build_model, step

log = logging.getLogger(__name__)


@dataclass
class ScenarioConfig:
    model: str = "cstr"
    model_overrides: dict = field(default_factory=dict)
    r_true: tuple = (1.0,)
    r_star: tuple = (1.0,)
    x0: tuple = (0.5, 0.5)
    steps: int = 100
    dt: float = 0.01
    schedule: tuple = CSTR_SCHEDULE
    setpoint_mode: str = "equilibrium"
    learning_enabled: bool = False
    learning_start_step: int = 10
    segments: int = 10
    geodesic_max_iterations: int = 200
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.estimator, dict):
            self.estimator = EstimatorConfig(**self.estimator)
        if self.setpoint_mode not in ("equilibrium", "as_given"):
            raise ConfigError("setpoint_mode must be 'equilibrium' or 'as_given'")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.learning_enabled and not 0 <= self.learning_start_step < self.steps:
            raise ConfigError("learning_start_step must lie inside the horizon")

    def build_model(self) -> PlantModel:
        return build_model(self.model, self.model_overrides)

    def build_schedule(self, model: PlantModel | None = None) -> SetpointSchedule:
        """Scheduled setpoints, snapped to nearby nominal equilibria in ``equilibrium`` mode.

        Snapping uses the initial nominal parameter ``r_star`` so the targets
        do not move while the estimate is refined.
        """
        schedule = SetpointSchedule(tuple((t, tuple(x)) for t, x in self.schedule))
        if self.setpoint_mode == "equilibrium":
            schedule = equilibrium_schedule(schedule, model or self.build_model(), self.r_star)
        return schedule


@dataclass
class SimTrace:
    n: int
    m: int
    ell: int
    k: list = field(default_factory=list)
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    u: list = field(default_factory=list)
    u_raw: list = field(default_factory=list)
    x_star: list = field(default_factory=list)
    u_star: list = field(default_factory=list)
    d_geo: list = field(default_factory=list)
    r_hat: list = field(default_factory=list)
    saturated: list = field(default_factory=list)
    est_loss: list = field(default_factory=list)
    error: str | None = None
    final_state: np.ndarray | None = None
    elapsed_s: float = 0.0

    def __len__(self):
        return len(self.k)

    def arrays(self):
        return {name: np.asarray(getattr(self, name)) for name in
                ("k", "t", "x", "u", "u_raw", "x_star", "u_star", "d_geo", "r_hat", "saturated")}

    def header(self):
        def cols(stem, count):
            return [stem] if count == 1 else [f"{stem}{i+1}" for i in range(count)]
        return (["k", "t"] + [f"x{i+1}" for i in range(self.n)] + cols("u", self.m)
                + cols("u_raw", self.m) + [f"x{i+1}_star" for i in range(self.n)]
                + cols("u_star", self.m) + ["d_geo"] + cols("r_hat", self.ell) + ["saturated"])


def _u_tilde(model, schedule, t, r_true, r_star):
    x = schedule.target_at(t)
    a = solve_reference_input(model, r_true, x, x).u_star
    b = solve_reference_input(model, r_star, x, x).u_star
    return float(np.linalg.norm(a - b))


def run_closed_loop(cfg: ScenarioConfig, dccm, model: PlantModel | None = None) -> SimTrace:
    """Simulate ``cfg.steps`` control intervals.

    Per step: optionally refresh the parameter estimate, build the reference
    triplet with it, compute the geodesic control, then advance the plant
    with the true parameter. A reference or numeric failure stops the run and
    is recorded in ``trace.error``.
    """
    model = model or cfg.build_model()
    if not isinstance(dccm, DccmModel):
        dccm = DccmModel(dccm, model.n, model.m)
    if dccm.n != model.n or dccm.m != model.m:
        raise ConfigError("checkpoint dimensions do not match the model")
    schedule = cfg.build_schedule(model)
    schedule.check_inside(model.state_box)
    x = np.asarray(cfg.x0, dtype=float)
    if x.shape != (model.n,) or np.any(x < model.state_box[:, 0]) or np.any(x > model.state_box[:, 1]):
        raise ConfigError(f"x0 {cfg.x0} must be a state inside the state box")
    r_true = np.asarray(cfg.r_true, dtype=float)
    r_hat = np.asarray(cfg.r_star, dtype=float)
    gcfg = GeodesicConfig(segments=cfg.segments, max_iterations=cfg.geodesic_max_iterations)
    buffer = HistoryBuffer(cfg.estimator.history)
    estimator = ParameterEstimator(model, cfg.estimator, r_init=r_hat, seed=cfg.seed) \
        if cfg.learning_enabled else None
    trace = SimTrace(model.n, model.m, model.ell)
    t0 = time.perf_counter()
    x_prev = u_prev = None
    for k in range(cfg.steps):
        t = k * cfg.dt
        try:
            if x_prev is not None:
                buffer.push(x_prev, u_prev, x)
            loss = float("nan")
            if estimator is not None and k >= cfg.learning_start_step and len(buffer):
                r_hat = estimator.update_estimate(buffer, x)
                loss = estimator.last_losses[-1] if estimator.last_losses else float("nan")
            x_star, u_star, _ = reference_at(schedule, model, r_hat, t)
            dec = feedback_control(dccm, x, x_star, u_star, cfg.segments, model.input_box, gcfg)
            trace.k.append(k)
            trace.t.append(t)
            trace.x.append(x.copy())
            trace.u.append(dec.u.copy())
            trace.u_raw.append(dec.u_raw.copy())
            trace.x_star.append(np.array(x_star))
            trace.u_star.append(np.array(u_star))
            trace.d_geo.append(dec.d_geo)
            trace.r_hat.append(np.array(r_hat))
            trace.saturated.append(dec.saturated)
            trace.est_loss.append(loss)
            x_prev, u_prev = x, dec.u
            x = step(model, r_true, x, dec.u)
        except DccmError as exc:
            log.error("simulation aborted at step %d: %s", k, exc)
            trace.error = f"step {k}: {exc}"
            break
    trace.final_state = x
    trace.elapsed_s = time.perf_counter() - t0
    return trace


def write_trace(trace: SimTrace, path) -> None:
    rows = []
    a = trace.arrays()
    for i in range(len(trace)):
        rows.append([int(a["k"][i]), repr(float(a["t"][i])), *map(repr, a["x"][i].tolist()),
                     *map(repr, a["u"][i].tolist()), *map(repr, a["u_raw"][i].tolist()),
                     *map(repr, a["x_star"][i].tolist()), *map(repr, a["u_star"][i].tolist()),
                     repr(float(a["d_geo"][i])), *map(repr, a["r_hat"][i].tolist()),
                     int(a["saturated"][i])])
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(trace.header())
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_trace(path, n: int, m: int = 1, ell: int = 1) -> SimTrace:
    trace = SimTrace(n, m, ell)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != trace.header():
            raise ParseError(f"{path}: unexpected trace header {header}")
        for line_no, row in enumerate(reader, start=2):
            vals = row
            try:
                i = 0
                trace.k.append(int(vals[i])); i += 1
                trace.t.append(float(vals[i])); i += 1
                for name, count in (("x", n), ("u", m), ("u_raw", m), ("x_star", n), ("u_star", m)):
                    getattr(trace, name).append(np.array([float(v) for v in vals[i:i + count]]))
                    i += count
                trace.d_geo.append(float(vals[i])); i += 1
                trace.r_hat.append(np.array([float(v) for v in vals[i:i + ell]])); i += ell
                trace.saturated.append(bool(int(vals[i])))
            except (IndexError, ValueError) as exc:
                raise ParseError(f"{path}: bad row at line {line_no}: {exc}") from exc
    return trace


def setpoint_switch_steps(cfg: ScenarioConfig) -> list[int]:
    schedule = SetpointSchedule(tuple((t, tuple(x)) for t, x in cfg.schedule))
    return [int(round(t / cfg.dt)) for t, _ in schedule.entries]


def feedforward_mismatch(cfg: ScenarioConfig, model: PlantModel, t: float) -> float:
    """``|u*(r_true) - u*(r*)|`` at the setpoint active at time ``t``."""
    return _u_tilde(model, cfg.build_schedule(model), t, np.asarray(cfg.r_true, dtype=float),
                    np.asarray(cfg.r_star, dtype=float))
