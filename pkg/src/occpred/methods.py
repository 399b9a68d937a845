"""Uniform fit/score/serialize entry points over the four prediction methods."""

from __future__ import annotations

import json
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import boost, forest, lstm, markov
from .dataset import WindowedDataset, build_windows
from .errors import InputError
from .occupancy import OccupancyGrid

METHODS = ("markov", "rf", "gbt", "lstm")

_PARAM_TYPES = {
    "rf": forest.ForestParams,
    "gbt": boost.GBTParams,
    "lstm": lstm.TrainConfig,
}


def make_params(method: str, params: dict | None = None, seed: int = 0):
    """Typed hyperparameters for ``method`` from a plain dict (unknown keys rejected)."""
    params = dict(params or {})
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "markov":
        unknown = set(params) - {"alpha"}
        if unknown:
            raise InputError(f"unknown markov parameters: {sorted(unknown)}")
        return {"alpha": float(params.get("alpha", markov.DEFAULT_ALPHA))}
    cls = _PARAM_TYPES[method]
    allowed = {f.name for f in fields(cls)}
    unknown = set(params) - allowed
    if unknown:
        raise InputError(f"unknown {method} parameters: {sorted(unknown)}")
    if method == "lstm":
        params.setdefault("seed", seed)
    return cls(**params)


def params_dict(p) -> dict:
    return p if isinstance(p, dict) else asdict(p)


def fit(method: str, train: OccupancyGrid, K: int, params=None, seed: int = 0, n_jobs: int = 1):
    """Train ``method`` on a training grid with history length K."""
    p = params if params is not None and not isinstance(params, dict) else make_params(method, params, seed)
    if method == "markov":
        return markov.fit_markov(train, p["alpha"])
    ds = build_windows(train, K)
    if method == "rf":
        return forest.fit_forest_multi(ds, p, seed, n_jobs)
    if method == "gbt":
        return boost.fit_gbt_multi(ds, p, seed, n_jobs)
    return lstm.train(ds, p)


def predict_scores(model, ds: WindowedDataset) -> np.ndarray:
    """(N, F) occupancy scores in [0, 1] for every example of ``ds``."""
    if isinstance(model, markov.TransitionModel):
        return markov.predict_markov(model, ds.previous_state)
    if isinstance(model, lstm.LstmModel):
        if ds.K != model.K or ds.F != model.F:
            raise InputError(f"model was trained with K={model.K}, F={model.F}; dataset has K={ds.K}, F={ds.F}")
        return model.predict_proba(ds.sequences)
    if ds.K != model.K:
        raise InputError(f"model was trained with K={model.K}; dataset has K={ds.K}")
    return model.predict_proba(ds.features)


def method_of(model) -> str:
    if isinstance(model, markov.TransitionModel):
        return "markov"
    if isinstance(model, lstm.LstmModel):
        return "lstm"
    return model.method


def model_to_dict(model) -> dict:
    method = method_of(model)
    if method in ("rf", "gbt"):
        body = {
            "K": model.K,
            "F": model.F,
            "seed": model.seed,
            "bins": [m.to_dict() for m in model.per_bin],
        }
    else:
        body = model.to_dict()
    return {"method": method, "model": body}


def model_from_dict(d: dict):
    method, body = d["method"], d["model"]
    if method == "markov":
        return markov.TransitionModel.from_dict(body)
    if method == "lstm":
        return lstm.LstmModel.from_dict(body)
    if method == "rf":
        per_bin = [forest.ForestModel.from_dict(b) for b in body["bins"]]
    elif method == "gbt":
        per_bin = [boost.GBTModel.from_dict(b) for b in body["bins"]]
    else:
        raise InputError(f"unknown model method {method!r}")
    return forest.MultiOutputModel(method, int(body["K"]), int(body["F"]), per_bin, int(body["seed"]))


def save_model(model, path, provenance: dict | None = None) -> None:
    d = model_to_dict(model)
    if provenance is not None:
        d["provenance"] = provenance
    Path(path).write_text(json.dumps(d, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path):
    with Path(path).open(encoding="utf-8") as fh:
        d = json.load(fh)
    return model_from_dict(d), d.get("provenance")


def model_K(model) -> int | None:
    return None if isinstance(model, markov.TransitionModel) else model.K
