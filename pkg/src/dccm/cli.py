"""Command-line entry point: ``dccm <subcommand> ...``.

Subcommands wire the offline stages (data generation, training,
certification) and the online stage (closed-loop simulation) together.
Failures print a JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from .certifier import CertGrid, certify_region
from .dataset import GridSpec, export_csv, generate_dataset, load_dataset, save_dataset
from .dccm_trainer import DccmModel, TrainConfig, n_outputs, train_dccm, verify_contraction
from .errors import ConfigError, DccmError
from .geodesic import GeodesicConfig, compute_geodesic
from .mlp import load_checkpoint, save_checkpoint
from .param_estimator import EstimatorConfig
from .reference import SetpointSchedule, reference_diagnostics
from .sim import ScenarioConfig, run_closed_loop, write_trace
from .system_model import build_model

log = logging.getLogger("dccm")

WORKERS_ENV = "DCCM_WORKERS"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return value


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _model_overrides(args) -> dict:
    return {"input_gain": args.input_gain} if getattr(args, "input_gain", None) is not None else {}


def _log_resolved(name: str, resolved: dict) -> None:
    log.info("%s resolved config: %s", name, json.dumps(resolved, sort_keys=True, default=str))


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _load_dccm(path, model=None) -> tuple[DccmModel, dict]:
    net, meta = load_checkpoint(path)
    try:
        n, m = int(meta["n"]), int(meta["m"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"{path}: checkpoint metadata lacks state/input dimensions") from None
    if net.n_in != n or net.n_out != n_outputs(n, m):
        raise ConfigError(f"{path}: network shape {net.layer_sizes} does not fit n={n}, m={m}")
    if model is not None and (model.n, model.m) != (n, m):
        raise ConfigError(f"checkpoint is for n={n}, m={m} but model {model.name!r} has "
                          f"n={model.n}, m={model.m}")
    return DccmModel(net, n, m), meta


# -- subcommands -------------------------------------------------------------

def cmd_gen_data(args) -> int:
    model = build_model(args.model, _model_overrides(args))
    grid = GridSpec(args.state_step, args.input_step, args.param_step)
    workers = args.workers or _default_workers()
    _log_resolved("gen-data", {"model": args.model, "overrides": _model_overrides(args),
                               "grid": grid.to_json(), "workers": workers, "out": args.out})
    ds = generate_dataset(model, grid, workers=workers)
    save_dataset(ds, args.out)
    if args.csv:
        export_csv(ds, args.csv)
    log.info("wrote %d records (%d out of box, %d skipped) to %s",
             len(ds), int(ds.out_of_box.sum()), ds.skipped, args.out)
    return 0


def cmd_train_dccm(args) -> int:
    ds = load_dataset(args.data)
    cfg = TrainConfig(beta=args.beta, eps_minor=args.eps, eps_min=args.eps_min,
                      max_iterations=args.max_iters, learning_rate=args.lr,
                      include_out_of_box=not args.drop_out_of_box)
    _log_resolved("train-dccm", {"data": args.data, "train": asdict(cfg), "seed": args.seed})
    net, report = train_dccm(ds, cfg, seed=args.seed)
    verification = verify_contraction(net, ds, cfg)
    meta = {"model": ds.model_name, "n": ds.n, "m": ds.m, "ell": ds.ell, "beta": cfg.beta,
            "hidden": list(cfg.hidden), "seed": args.seed, "grid": ds.grid}
    save_checkpoint(net, args.out, meta)
    out = {"training": report.to_json(), "verification": verification.to_json(), "checkpoint": meta}
    _write_json(out, args.report or args.out + ".json")
    log.info("converged=%s after %d iterations; fraction_pd=%.4f",
             report.converged, report.iterations, verification.fraction_pd)
    return 0


def _region(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        region = json.load(fh)
    allowed = {"state_box", "input_box", "param_box"}
    if not isinstance(region, dict) or set(region) - allowed:
        raise ConfigError(f"region file accepts only {sorted(allowed)}")
    return region


def cmd_certify(args) -> int:
    model = build_model(args.model, _model_overrides(args))
    dccm, _ = _load_dccm(args.ckpt, model)
    state_step, input_step, param_step = args.grid
    grid = CertGrid(state_step, input_step, param_step, **_region(args.region))
    _log_resolved("certify", {"ckpt": args.ckpt, "model": args.model, "grid": grid.to_json(),
                              "lambda": args.lam})
    report = certify_region(dccm, model, grid, args.lam)
    _write_json(report.to_json(), args.out)
    log.info("certified=%s rate_min=%.4g (L=%.4g, radius=%.4g)",
             report.certified, report.rate_min, report.lipschitz, report.covering_radius)
    return 0


def load_run_config(path) -> ScenarioConfig:
    """Read a scenario JSON document; unknown keys are rejected."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    est = doc.get("estimator", {})
    if not isinstance(est, dict) or set(est) - {f.name for f in fields(EstimatorConfig)}:
        raise ConfigError(f"{path}: unknown estimator keys "
                          f"{sorted(set(est) - {f.name for f in fields(EstimatorConfig)})}")
    for key in ("r_true", "r_star", "x0"):
        if key in doc:
            doc[key] = tuple(doc[key])
    if "schedule" in doc:
        doc["schedule"] = tuple((t, tuple(x)) for t, x in doc["schedule"])
    try:
        return ScenarioConfig(**doc)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_simulate(args) -> int:
    cfg = load_run_config(args.config)
    model = cfg.build_model()
    dccm, _ = _load_dccm(args.ckpt, model)
    _log_resolved("simulate", {"scenario": asdict(cfg), "ckpt": args.ckpt, "seed": cfg.seed})
    trace = run_closed_loop(cfg, dccm, model)
    write_trace(trace, args.out)
    if trace.error:
        raise DccmError(f"simulation stopped early ({trace.error}); partial trace in {args.out}")
    log.info("wrote %d steps to %s", len(trace), args.out)
    return 0


def cmd_eval_geodesic(args) -> int:
    dccm, _ = _load_dccm(args.ckpt)
    x, x_star = _vector(args.from_), _vector(args.to)
    for v in (x, x_star):
        if v.shape != (dccm.n,):
            raise ConfigError(f"endpoints must have {dccm.n} components")
    cfg = GeodesicConfig(segments=args.segments)
    _log_resolved("eval-geodesic", {"ckpt": args.ckpt, "from": x.tolist(), "to": x_star.tolist(), "geodesic": asdict(cfg)})
    path = compute_geodesic(dccm, x, x_star, args.segments, cfg)
    _write_json({"nodes": path.nodes, "energy": path.energy, "length": path.length,
                 "converged": path.converged, "iterations": path.iterations,
                 "non_pd_nodes": path.non_pd_nodes}, args.out)
    return 0


def cmd_ref_diag(args) -> int:
    model = build_model(args.model, _model_overrides(args))
    schedule = None
    if args.config:
        cfg = load_run_config(args.config)
        schedule = SetpointSchedule(cfg.schedule)
    _log_resolved("ref-diag", {"model": args.model, "overrides": _model_overrides(args)})
    _write_json(reference_diagnostics(model, schedule), args.out)
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dccm", description="Contraction-metric control pipeline.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="sweep the model over a lattice and store training records")
    g.add_argument("--model", default="cstr")
    g.add_argument("--input-gain", type=float, default=None, help="CSTR input coefficient override")
    g.add_argument("--state-step", type=float, default=1 / 60)
    g.add_argument("--input-step", type=float, default=1 / 10)
    g.add_argument("--param-step", type=float, default=1 / 10)
    g.add_argument("--workers", type=int, default=None, help=f"default from ${WORKERS_ENV} or 1")
    g.add_argument("--out", required=True)
    g.add_argument("--csv", default=None, help="also export records as CSV")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train-dccm", help="train the metric/gain network on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--beta", type=float, default=0.1)
    t.add_argument("--eps", type=float, default=1e-4, help="margin on each leading minor")
    t.add_argument("--eps-min", type=float, default=1e-6, help="stop when the total loss is below this")
    t.add_argument("--max-iters", type=int, default=5000)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--drop-out-of-box", action="store_true",
                   help="exclude records whose successor leaves the state box")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--report", default=None, help="training report JSON (default: <out>.json)")
    t.set_defaults(func=cmd_train_dccm)

    c = sub.add_parser("certify", help="finite-grid contraction certificate")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--model", default="cstr")
    c.add_argument("--input-gain", type=float, default=None)
    c.add_argument("--grid", type=float, nargs=3, metavar=("STATE", "INPUT", "PARAM"),
                   default=(0.05, 0.1, 0.5), help="lattice steps")
    c.add_argument("--region", default=None, help="JSON file with state_box/input_box/param_box")
    c.add_argument("--lambda", dest="lam", type=float, required=True, help="target rate")
    c.add_argument("--out", default="-")
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("simulate", help="closed-loop run from a scenario JSON")
    s.add_argument("--config", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True, help="trace CSV")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("eval-geodesic", help="geodesic between two states under a trained metric")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--from", dest="from_", required=True, help="comma-separated state")
    e.add_argument("--to", required=True, help="comma-separated state")
    e.add_argument("--segments", type=int, default=10)
    e.add_argument("--out", default="-")
    e.set_defaults(func=cmd_eval_geodesic)

    r = sub.add_parser("ref-diag", help="feed-forward inputs at the scheduled setpoints")
    r.add_argument("--model", default="cstr")
    r.add_argument("--input-gain", type=float, default=None)
    r.add_argument("--config", default=None, help="scenario JSON supplying a schedule")
    r.add_argument("--out", default="-")
    r.set_defaults(func=cmd_ref_diag)
    return p


def _error(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return _error("usage", str(exc), 2)
    level = logging.WARNING - 10 * min(args.verbose + 1, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _error("schema", str(exc), 2)
    except DccmError as exc:
        return _error(type(exc).__name__, str(exc), 1)
    except FileNotFoundError as exc:
        return _error("missing_file", str(exc), 1)
    except (OSError, ValueError) as exc:
        return _error(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
