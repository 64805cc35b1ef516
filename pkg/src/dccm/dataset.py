"""Lattice sweep over parameter x state x input producing training records."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np

from .container import read_container, write_container
from .errors import ConfigError, NumericOverflowError, ParseError
from .system_model import PlantModel, jacobians, step

log = logging.getLogger(__name__)

MAGIC = b"DCCMDS01"
_ROUND_SLACK = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Lattice steps; each may be a scalar or one value per dimension."""

    state_step: float | tuple = 1 / 60
    input_step: float | tuple = 1 / 10
    param_step: float | tuple = 1 / 10

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, (tuple, list)) else v) for k, v in asdict(self).items()}


def axis_points(lo: float, hi: float, step: float) -> np.ndarray:
    if not step > 0:
        raise ConfigError(f"grid step must be positive, got {step}")
    count = int(math.floor((hi - lo) / step + _ROUND_SLACK)) + 1
    return lo + step * np.arange(count)


def _steps_for(box: np.ndarray, step) -> np.ndarray:
    steps = np.broadcast_to(np.asarray(step, dtype=float), (box.shape[0],))
    return steps


def grid_axes(box, step) -> list[np.ndarray]:
    box = np.atleast_2d(np.asarray(box, dtype=float))
    return [axis_points(lo, hi, s) for (lo, hi), s in zip(box, _steps_for(box, step))]


def grid_points(box, step) -> np.ndarray:
    """Inclusive lattice over a box, shape ``(count, dim)``, last axis fastest."""
    axes = grid_axes(box, step)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def validate_grid(model: PlantModel, grid: GridSpec) -> None:
    for name, box, s in (("state_step", model.state_box, grid.state_step),
                         ("input_step", model.input_box, grid.input_step),
                         ("param_step", model.param_box, grid.param_step)):
        steps = _steps_for(box, s)
        if np.any(steps <= 0):
            raise ConfigError(f"{name} must be positive")
        widths = box[:, 1] - box[:, 0]
        if np.any(steps > widths + _ROUND_SLACK):
            # a step wider than the box is allowed (yields the lower bound only) but noted
            log.debug("%s exceeds box width %s; lattice collapses to lower bound", name, widths)


def expected_count(model: PlantModel, grid: GridSpec) -> int:
    return (len(grid_points(model.param_box, grid.param_step))
            * len(grid_points(model.state_box, grid.state_step))
            * len(grid_points(model.input_box, grid.input_step)))


def record_dtype(n: int, m: int, ell: int) -> np.dtype:
    return np.dtype([
        ("r", "<f8", (ell,)),
        ("x_k", "<f8", (n,)),
        ("x_k1", "<f8", (n,)),
        ("A", "<f8", (n, n)),
        ("B", "<f8", (n, m)),
        ("out_of_box", "u1"),
    ])


@dataclass
class Dataset:
    """Columnar store of training records ``{r, x_k, x_k1, A, B}``.

    ``out_of_box`` flags records whose successor state left the state box.
    """

    records: np.ndarray
    n: int
    m: int
    ell: int
    model_name: str = ""
    grid: dict = field(default_factory=dict)
    skipped: int = 0

    def __post_init__(self):
        self.records.setflags(write=False)

    def __len__(self):
        return len(self.records)

    @property
    def r(self):
        return self.records["r"]

    @property
    def x_k(self):
        return self.records["x_k"]

    @property
    def x_k1(self):
        return self.records["x_k1"]

    @property
    def A(self):
        return self.records["A"]

    @property
    def B(self):
        return self.records["B"]

    @property
    def out_of_box(self):
        return self.records["out_of_box"].astype(bool)

    def subset(self, mask) -> "Dataset":
        return Dataset(self.records[mask].copy(), self.n, self.m, self.ell,
                       self.model_name, dict(self.grid), self.skipped)

    @classmethod
    def from_arrays(cls, r, x_k, x_k1, A, B, out_of_box=None, **kw) -> "Dataset":
        x_k = np.atleast_2d(x_k)
        N, n = x_k.shape
        B = np.asarray(B, dtype=float).reshape(N, n, -1)
        r = np.asarray(r, dtype=float).reshape(N, -1)
        rec = np.zeros(N, dtype=record_dtype(n, B.shape[-1], r.shape[-1]))
        rec["r"], rec["x_k"] = r, x_k
        rec["x_k1"] = np.asarray(x_k1, dtype=float).reshape(N, n)
        rec["A"] = np.asarray(A, dtype=float).reshape(N, n, n)
        rec["B"] = B
        rec["out_of_box"] = 0 if out_of_box is None else np.asarray(out_of_box, dtype=np.uint8)
        return cls(rec, n, B.shape[-1], r.shape[-1], **kw)


def _slice_records(model: PlantModel, r: np.ndarray, xs: np.ndarray, us: np.ndarray):
    nx, nu = len(xs), len(us)
    X = np.repeat(xs, nu, axis=0)
    U = np.tile(us, (nx, 1))
    R = np.broadcast_to(r, (nx * nu, model.ell))
    with np.errstate(all="ignore"):
        X1 = model.f(R, X) + np.einsum("...ij,...j->...i", model.g(R, X), U)
        try:
            A, B = jacobians(model, R, X, U)
        except NumericOverflowError:
            A = np.full((len(X), model.n, model.n), np.nan)
            B = model.g(R, X)
    finite = (np.all(np.isfinite(X1), axis=1) & np.all(np.isfinite(A), axis=(1, 2))
              & np.all(np.isfinite(B), axis=(1, 2)))
    rec = np.zeros(int(finite.sum()), dtype=record_dtype(model.n, model.m, model.ell))
    rec["r"], rec["x_k"], rec["x_k1"] = R[finite], X[finite], X1[finite]
    if not np.all(finite):
        A = np.where(finite[:, None, None], A, 0.0)
    rec["A"], rec["B"] = A[finite], B[finite]
    lo, hi = model.state_box[:, 0], model.state_box[:, 1]
    rec["out_of_box"] = np.any((X1[finite] < lo) | (X1[finite] > hi), axis=1)
    return rec, int((~finite).sum())


def generate_dataset(model: PlantModel, grid: GridSpec, workers: int = 1) -> Dataset:
    """Sweep every ``(r, x_k, u_k)`` lattice tuple, r-major then x then u.

    Successors outside the state box are kept and flagged; tuples whose step
    or Jacobian is non-finite are skipped and counted in ``Dataset.skipped``.
    Parallel workers split the work by r-slices; results are concatenated in
    lattice order so output is independent of ``workers``.
    """
    validate_grid(model, grid)
    rs = grid_points(model.param_box, grid.param_step)
    xs = grid_points(model.state_box, grid.state_step)
    us = grid_points(model.input_box, grid.input_step)

    def work(r):
        return _slice_records(model, r, xs, us)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, rs))
    else:
        parts = [work(r) for r in rs]
    records = np.concatenate([p[0] for p in parts]) if parts else np.zeros(
        0, dtype=record_dtype(model.n, model.m, model.ell))
    skipped = sum(p[1] for p in parts)
    if skipped:
        log.warning("skipped %d lattice tuples with non-finite results", skipped)
    return Dataset(records, model.n, model.m, model.ell, model.name, grid.to_json(), skipped)


def find_generating_input(model: PlantModel, grid: GridSpec, r, x_k, x_k1, tol=1e-12):
    """Nearest lattice input reproducing ``x_k1`` from ``(r, x_k)``, or None."""
    us = grid_points(model.input_box, grid.input_step)
    nxt = step(model, np.broadcast_to(r, (len(us), model.ell)),
               np.broadcast_to(x_k, (len(us), model.n)), us)
    err = np.abs(nxt - x_k1).max(axis=1)
    i = int(np.argmin(err))
    return us[i] if err[i] <= tol else None


def save_dataset(ds: Dataset, path) -> None:
    header = {
        "format": "dccm-dataset", "version": 1,
        "n": ds.n, "m": ds.m, "ell": ds.ell, "count": len(ds),
        "model": ds.model_name, "grid": ds.grid, "skipped": ds.skipped,
        "record_bytes": ds.records.dtype.itemsize,
        "fields": ["r", "x_k", "x_k1", "A", "B", "out_of_box"],
    }
    write_container(path, MAGIC, header, ds.records.tobytes())


def load_dataset(path) -> Dataset:
    header, payload, offset = read_container(path, MAGIC)
    try:
        n, m, ell, count = (int(header[k]) for k in ("n", "m", "ell", "count"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: header missing dimension fields: {exc}") from exc
    dt = record_dtype(n, m, ell)
    complete = len(payload) // dt.itemsize
    if complete < count:
        raise ParseError(
            f"{path}: truncated at record index {complete}, byte offset "
            f"{offset + complete * dt.itemsize} (expected {count} records of {dt.itemsize} bytes)")
    if len(payload) != count * dt.itemsize:
        raise ParseError(f"{path}: {len(payload) - count * dt.itemsize} trailing bytes after "
                         f"record index {count - 1}, byte offset {offset + count * dt.itemsize}")
    records = np.frombuffer(payload, dtype=dt, count=count).copy()
    return Dataset(records, n, m, ell, header.get("model", ""), header.get("grid", {}),
                   int(header.get("skipped", 0)))


def export_csv(ds: Dataset, path) -> None:
    n, m, ell = ds.n, ds.m, ds.ell
    cols = ([f"r{i+1}" for i in range(ell)] + [f"x{i+1}" for i in range(n)]
            + [f"x{i+1}_next" for i in range(n)]
            + [f"A{i+1}{j+1}" for i, j in product(range(n), range(n))]
            + [f"B{i+1}{j+1}" for i, j in product(range(n), range(m))] + ["out_of_box"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for rec in ds.records:
            w.writerow([*map(repr, rec["r"].tolist()), *map(repr, rec["x_k"].tolist()),
                        *map(repr, rec["x_k1"].tolist()), *map(repr, rec["A"].ravel().tolist()),
                        *map(repr, rec["B"].ravel().tolist()), int(rec["out_of_box"])])
