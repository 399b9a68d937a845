"""
End-to-end pipeline: input -> occupancy grid -> windows -> model -> scores -> report.

Stages talk to each other only through files:

    grid.csv              occupancy grid (``minute,bin_0,...``)
    dataset_summary.json  window/split bookkeeping
    model.json            trained model with provenance
    scores.csv            ``origin_minute,s_0,...`` for the test windows
    report.json           metric suite with provenance
    per_bin_accuracy.csv, accuracy_vs_rate.csv, strip.csv   plot-ready tables
    run_status.json       "ok", or the failed stage and its error

CSV artifacts get a ``<name>.meta.json`` sidecar carrying the provenance
block, since the CSV layouts themselves are fixed.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import build_windows, chronological_split
from .errors import InputError, StageError
from .evaluation import (
    DEFAULT_PFA_TARGETS,
    EvalReport,
    ScoreMatrix,
    evaluate,
    prediction_strip,
    write_per_bin_csv,
    write_scatter_csv,
    write_strip_csv,
)
from .methods import METHODS, fit, make_params, params_dict, predict_scores, save_model
from .occupancy import (
    DEFAULT_IMBALANCE_BOUND,
    DEFAULT_MIN_TRANSITIONS,
    OccupancyGrid,
    compute_occupancy,
    read_grid,
    read_sweep_csv,
    write_grid_csv,
)
from .synthgen import gen_band, load_band_spec

OUT_ENV = "OCCPRED_OUT"
DEFAULT_SEED = 0


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


@dataclass
class RunConfig:
    spec: str | None = None
    grid: str | None = None
    sweep: str | None = None
    bin_width_hz: float = 5e6
    threshold_dbm: float | None = None
    n_bins: int | None = None
    K: int = 10
    train_fraction: float = 0.75
    method: str = "rf"
    params: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED
    out: str = ""
    pfa: list = field(default_factory=lambda: list(DEFAULT_PFA_TARGETS))
    min_transitions: int = DEFAULT_MIN_TRANSITIONS
    imbalance_bound: float = DEFAULT_IMBALANCE_BOUND

    def __post_init__(self):
        if not self.out:
            self.out = str(default_out_root() / self.method)
        self.pfa = [float(p) for p in self.pfa]

    def validate(self) -> None:
        inputs = [x for x in (self.spec, self.grid, self.sweep) if x]
        if len(inputs) != 1:
            raise InputError("exactly one of spec, grid or sweep must be given")
        for p in inputs:
            if not Path(p).exists():
                raise InputError(f"input file not found: {p}")
        if self.sweep and self.threshold_dbm is None:
            raise InputError("a sweep input needs threshold_dbm")
        if not self.bin_width_hz > 0:
            raise InputError("bin_width_hz must be positive")
        if self.K < 1:
            raise InputError("K must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise InputError("train_fraction must lie in (0, 1)")
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.pfa or any(not 0 < p <= 1 for p in self.pfa):
            raise InputError("pfa targets must lie in (0, 1]")
        make_params(self.method, self.params, self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def provenance(config: RunConfig, **extra) -> dict:
    return {"config": config.to_dict(), "seed": config.seed, "version": __version__, **extra}


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_meta(path, prov: dict, **extra) -> None:
    write_json(f"{path}.meta.json", {"provenance": prov, **extra})


def read_meta(path) -> dict:
    meta = Path(f"{path}.meta.json")
    if not meta.exists():
        return {}
    with meta.open(encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Scores file
# ---------------------------------------------------------------------------


def write_scores_csv(origin_minutes, scores, path) -> None:
    scores = np.asarray(scores)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin_minute"] + [f"s_{f}" for f in range(scores.shape[1])])
        for m, row in zip(np.asarray(origin_minutes).tolist(), scores.tolist()):
            w.writerow([m, *(repr(float(s)) for s in row)])


def read_scores_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "origin_minute":
            raise InputError(f"{path}: expected header 'origin_minute,s_0,...'")
        body = np.loadtxt(fh, delimiter=",", dtype=np.float64, ndmin=2)
    return body[:, 0].astype(np.int64), body[:, 1:]


def labels_for(grid: OccupancyGrid, origin_minutes) -> np.ndarray:
    rel = np.asarray(origin_minutes, dtype=np.int64) - grid.start_time
    if rel.size and (rel.min() < 0 or rel.max() >= grid.T):
        raise InputError("scored minutes fall outside the grid")
    return grid.values[:, rel].T


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def load_input_grid(config: RunConfig) -> OccupancyGrid:
    if config.spec:
        return gen_band(load_band_spec(config.spec))
    if config.grid:
        return read_grid(config.grid, config.bin_width_hz)
    sweep = read_sweep_csv(config.sweep)
    return compute_occupancy(sweep, config.bin_width_hz, config.threshold_dbm, config.n_bins)


def test_windows(grid: OccupancyGrid, K: int, train_fraction: float):
    _, test = chronological_split(grid, train_fraction, K)
    return build_windows(test, K)


def dataset_summary(grid: OccupancyGrid, K: int, train_fraction: float) -> dict:
    train, test = chronological_split(grid, train_fraction, K)
    return {
        "F": grid.F,
        "T": grid.T,
        "K": K,
        "feature_dim": K * grid.F,
        "train_minutes": [train.start_time, train.start_time + train.T],
        "test_minutes": [test.start_time, test.start_time + test.T],
        "n_train_examples": train.T - K,
        "n_test_examples": test.T - K,
    }


class _Stage:
    def __init__(self, name: str, status: dict):
        self.name = name
        self.status = status

    def __enter__(self):
        self.status["stage"] = self.name
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def run_pipeline(config: RunConfig, n_jobs: int = 1) -> EvalReport:
    """Run every stage into ``config.out``; raises StageError naming the failed stage.

    ``n_jobs`` only sets the worker-thread count for per-bin training and does
    not change any artifact.
    """
    out = Path(config.out)
    status: dict = {"status": "running"}
    try:
        with _Stage("config", status):
            config.validate()
            out.mkdir(parents=True, exist_ok=True)
            prov = provenance(config)
            write_json(out / "config.json", config.to_dict())
        with _Stage("occupancy", status):
            grid = load_input_grid(config)
            write_grid_csv(grid, out / "grid.csv")
            write_meta(out / "grid.csv", prov, bin_width_hz=grid.bin_width)
        with _Stage("windows", status):
            train, test = chronological_split(grid, config.train_fraction, config.K)
            ds_test = build_windows(test, config.K)
            write_json(out / "dataset_summary.json", {**dataset_summary(grid, config.K, config.train_fraction), "provenance": prov})
        with _Stage("train", status):
            params = make_params(config.method, config.params, config.seed)
            model = fit(config.method, train, config.K, params, config.seed, n_jobs)
            save_model(model, out / "model.json", {**prov, "params": params_dict(params)})
        with _Stage("predict", status):
            scores = predict_scores(model, ds_test)
            write_scores_csv(ds_test.origin_minutes, scores, out / "scores.csv")
            write_meta(out / "scores.csv", prov, method=config.method, K=config.K)
        with _Stage("eval", status):
            sm = ScoreMatrix(scores, ds_test.targets, config.method, config.K, ds_test.origin_minutes)
            report = evaluate(
                sm, config.pfa, config.min_transitions, config.imbalance_bound,
                provenance={**prov, "params": params_dict(params)},
            )
            (out / "report.json").write_text(report.to_json(), encoding="utf-8")
        with _Stage("report", status):
            write_per_bin_csv(report, out / "per_bin_accuracy.csv")
            write_scatter_csv(report, out / "accuracy_vs_rate.csv")
            write_strip_csv(prediction_strip(sm, int(ds_test.origin_minutes[0])), out / "strip.csv")
            for name in ("per_bin_accuracy.csv", "accuracy_vs_rate.csv", "strip.csv"):
                write_meta(out / name, prov)
    except StageError as exc:
        if out.exists():
            write_json(out / "run_status.json", {"status": "failed", "stage": exc.stage, "error": str(exc.cause)})
        raise
    write_json(out / "run_status.json", {"status": "ok"})
    return report
