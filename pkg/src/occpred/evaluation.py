"""
Metrics over (N, F) score matrices against binary labels.

Conventions:

- accuracy-style metrics decide "occupied" when score > tau (tau = 0.5 by default);
- detection metrics count a cell as flagged when score >= tau, for both Pd and
  Pfa, and tau is one threshold shared by all bins and minutes;
- a bin whose labels hold a single class gets the undefined rate (TPR or TNR)
  set to 1 and is listed in ``single_class_bins``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError
from .markov import decide
from .occupancy import DEFAULT_IMBALANCE_BOUND, DEFAULT_MIN_TRANSITIONS, BinDynamics, classify_dynamics

DEFAULT_PFA_TARGETS = (0.01, 0.05)


@dataclass(frozen=True)
class ScoreMatrix:
    scores: np.ndarray
    labels: np.ndarray
    method: str = ""
    K: int | None = None
    origin_minutes: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels)
        if s.shape != y.shape or s.ndim != 2:
            raise InputError(f"scores {s.shape} and labels {y.shape} must be equal 2-D shapes")
        if s.size and (np.any(~np.isfinite(s)) or s.min() < 0 or s.max() > 1):
            raise InputError("scores must lie in [0, 1]")
        if y.size and not np.isin(y, (0, 1)).all():
            raise InputError("labels must be 0/1")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y.astype(np.uint8))

    @property
    def F(self) -> int:
        return self.scores.shape[1]

    def select_bins(self, mask) -> "ScoreMatrix":
        mask = np.asarray(mask)
        return ScoreMatrix(self.scores[:, mask], self.labels[:, mask], self.method, self.K, self.origin_minutes)


def average_accuracy(sm: ScoreMatrix, tau: float = 0.5) -> float:
    if sm.scores.size == 0:
        raise InputError("empty score matrix")
    return float(np.mean(decide(sm.scores, tau) == sm.labels))


def per_bin_accuracy(sm: ScoreMatrix, tau: float = 0.5) -> np.ndarray:
    if sm.scores.shape[0] == 0:
        raise InputError("empty score matrix")
    return np.mean(decide(sm.scores, tau) == sm.labels, axis=0)


def per_bin_balanced_accuracy(sm: ScoreMatrix, tau: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """(BA per bin, single-class flag per bin)."""
    pred = decide(sm.scores, tau).astype(bool)
    y = sm.labels.astype(bool)
    n_pos = y.sum(axis=0)
    n_neg = (~y).sum(axis=0)
    tp = (pred & y).sum(axis=0)
    tn = (~pred & ~y).sum(axis=0)
    tpr = np.divide(tp, n_pos, out=np.ones(sm.F), where=n_pos > 0)
    tnr = np.divide(tn, n_neg, out=np.ones(sm.F), where=n_neg > 0)
    return 0.5 * (tpr + tnr), (n_pos == 0) | (n_neg == 0)


def balanced_accuracy(sm: ScoreMatrix, tau: float = 0.5) -> float:
    ba, _ = per_bin_balanced_accuracy(sm, tau)
    return float(ba.mean())


def _count_at_or_above(sorted_scores: np.ndarray, tau) -> np.ndarray:
    return sorted_scores.size - np.searchsorted(sorted_scores, tau, side="left")


def calibrate_threshold(sm: ScoreMatrix, target_pfa: float) -> tuple[float, float]:
    """Smallest candidate tau whose pooled false-alarm rate is <= target.

    Candidates are 0, every observed score, and the next float above the
    largest score (which flags nothing, so a feasible tau always exists).
    Pd only changes at occupied scores and Pfa only at idle scores, so the
    smallest feasible candidate also maximizes Pd.
    """
    if not 0.0 < target_pfa <= 1.0:
        raise InputError(f"target_pfa must lie in (0, 1], got {target_pfa}")
    idle = np.sort(sm.scores[sm.labels == 0])
    if idle.size == 0:
        raise InputError("no idle cells: false-alarm rate is undefined")
    top = float(sm.scores.max())
    cands = np.unique(np.concatenate([[0.0], sm.scores.ravel(), [np.nextafter(top, np.inf)]]))
    pfa = _count_at_or_above(idle, cands) / idle.size
    k = int(np.flatnonzero(pfa <= target_pfa)[0])
    return float(cands[k]), float(pfa[k])


def pd_at_pfa(sm: ScoreMatrix, target_pfa: float) -> tuple[float, float, float]:
    """(Pd, achieved Pfa, tau) at the pooled operating point for ``target_pfa``."""
    occupied = sm.scores[sm.labels == 1]
    if occupied.size == 0:
        raise InputError("no occupied cells: detection probability is undefined")
    tau, pfa = calibrate_threshold(sm, target_pfa)
    return float(np.mean(occupied >= tau)), pfa, tau


def pd_at_pfa_per_bin(sm: ScoreMatrix, target_pfa: float) -> np.ndarray:
    """Per-bin calibration (analysis only); NaN where a bin lacks either class."""
    out = np.full(sm.F, np.nan)
    for f in range(sm.F):
        col = sm.select_bins(np.arange(sm.F) == f)
        if 0 < col.labels.sum() < col.labels.size:
            out[f] = pd_at_pfa(col, target_pfa)[0]
    return out


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    pearson_r: float | None


def accuracy_vs_dynamics(per_bin_acc, transition_rates) -> LinearFit:
    """Least-squares line of accuracy on transition count, plus Pearson r."""
    y = np.asarray(per_bin_acc, dtype=np.float64)
    x = np.asarray(transition_rates, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise InputError("need two equal-length vectors with at least two bins")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise InputError("transition rates are constant; the fit is undefined")
    dy = y - y.mean()
    slope = float(dx @ dy) / sxx
    syy = float(dy @ dy)
    r = float(dx @ dy) / np.sqrt(sxx * syy) if syy > 0 else None
    return LinearFit(slope, float(y.mean() - slope * x.mean()), r)


def label_dynamics(
    labels: np.ndarray,
    min_transitions: int = DEFAULT_MIN_TRANSITIONS,
    imbalance_bound: float = DEFAULT_IMBALANCE_BOUND,
) -> tuple[np.ndarray, np.ndarray]:
    """(transition count, dynamic mask) per bin of an (N, F) label matrix."""
    y = np.asarray(labels)
    trans = np.count_nonzero(y[1:] != y[:-1], axis=0)
    dyn = BinDynamics(trans, y.mean(axis=0), np.zeros((y.shape[1], 0)))
    return trans, classify_dynamics(dyn, min_transitions, imbalance_bound)


@dataclass
class EvalReport:
    method: str
    K: int | None
    n_examples: int
    F: int
    average_accuracy: float
    balanced_accuracy: float
    pd_at: dict
    pd_at_dynamic: dict
    per_bin_accuracy: list
    per_bin_balanced_accuracy: list
    single_class_bins: list
    transition_rate: list
    dynamic_bins: list
    fit: dict | None
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _pd_block(sm: ScoreMatrix, targets: Sequence[float]) -> dict:
    out = {}
    for target in targets:
        try:
            pd, pfa, tau = pd_at_pfa(sm, target)
        except InputError:
            out[repr(float(target))] = None
            continue
        out[repr(float(target))] = {"pd": pd, "pfa": pfa, "tau": tau}
    return out


def evaluate(
    sm: ScoreMatrix,
    pfa_targets: Sequence[float] = DEFAULT_PFA_TARGETS,
    min_transitions: int = DEFAULT_MIN_TRANSITIONS,
    imbalance_bound: float = DEFAULT_IMBALANCE_BOUND,
    provenance: dict | None = None,
) -> EvalReport:
    """Full metric suite. Transition counts and dynamic classes come from the labels."""
    acc = per_bin_accuracy(sm)
    ba, single = per_bin_balanced_accuracy(sm)
    trans, dynamic = label_dynamics(sm.labels, min_transitions, imbalance_bound)
    try:
        fit = asdict(accuracy_vs_dynamics(acc, trans))
    except InputError:
        fit = None
    return EvalReport(
        method=sm.method,
        K=sm.K,
        n_examples=int(sm.scores.shape[0]),
        F=sm.F,
        average_accuracy=average_accuracy(sm),
        balanced_accuracy=float(ba.mean()),
        pd_at=_pd_block(sm, pfa_targets),
        pd_at_dynamic=_pd_block(sm.select_bins(dynamic), pfa_targets) if dynamic.any() else {},
        per_bin_accuracy=acc.tolist(),
        per_bin_balanced_accuracy=ba.tolist(),
        single_class_bins=np.flatnonzero(single).tolist(),
        transition_rate=trans.tolist(),
        dynamic_bins=np.flatnonzero(dynamic).tolist(),
        fit=fit,
        provenance=provenance or {},
    )


def k_sweep(
    grid,
    method: str,
    Ks: Sequence[int],
    train_fraction: float = 0.75,
    params: dict | None = None,
    seed: int = 0,
    n_jobs: int = 1,
    tau: float = 0.5,
) -> dict[int, float]:
    """Average test accuracy per history length.

    Every K is scored on the same test minutes (those at least max(Ks)
    minutes into the test split), so results are comparable across K and the
    Markov baseline, which only sees the previous minute, comes out identical.
    """
    from .dataset import build_windows, chronological_split
    from .methods import fit, predict_scores

    Ks = [int(k) for k in Ks]
    if not Ks or min(Ks) < 1:
        raise InputError("Ks must be a nonempty list of positive integers")
    k_max = max(Ks)
    train, test = chronological_split(grid, train_fraction, K=k_max)
    out = {}
    for K in Ks:
        model = fit(method, train, K, params, seed, n_jobs)
        ds = build_windows(test, K)
        ds = ds.subset(np.flatnonzero(ds.origin_minutes >= test.start_time + k_max))
        sm = ScoreMatrix(predict_scores(model, ds), ds.targets, method, K)
        out[K] = average_accuracy(sm, tau)
    return out


# ---------------------------------------------------------------------------
# Plot-ready CSV outputs
# ---------------------------------------------------------------------------


def _write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_per_bin_csv(report: EvalReport, path) -> None:
    dyn = set(report.dynamic_bins)
    _write_rows(
        path,
        ["bin", "accuracy", "balanced_accuracy", "transition_count", "dynamic"],
        [
            [f, repr(a), repr(b), t, int(f in dyn)]
            for f, (a, b, t) in enumerate(
                zip(report.per_bin_accuracy, report.per_bin_balanced_accuracy, report.transition_rate)
            )
        ],
    )


def write_scatter_csv(report: EvalReport, path) -> None:
    fit = report.fit
    rows = []
    for f, (t, a) in enumerate(zip(report.transition_rate, report.per_bin_accuracy)):
        fitted = "" if fit is None else repr(fit["intercept"] + fit["slope"] * t)
        rows.append([f, t, repr(a), fitted])
    _write_rows(path, ["bin", "transition_count", "accuracy", "fitted_accuracy"], rows)


def write_ksweep_csv(results: dict[str, dict[int, float]], path) -> None:
    rows = [[method, K, repr(acc)] for method, by_k in results.items() for K, acc in sorted(by_k.items())]
    _write_rows(path, ["method", "K", "average_accuracy"], rows)


def prediction_strip(sm: ScoreMatrix, minute: int, tau: float = 0.5) -> list[tuple[int, int, int]]:
    """(bin, truth, prediction) rows for one test minute (absolute minute index)."""
    if sm.origin_minutes is None:
        raise InputError("score matrix has no minute index")
    hits = np.flatnonzero(np.asarray(sm.origin_minutes) == minute)
    if hits.size == 0:
        lo, hi = int(sm.origin_minutes[0]), int(sm.origin_minutes[-1])
        raise InputError(f"minute {minute} is not among the scored minutes [{lo}, {hi}]")
    n = hits[0]
    pred = decide(sm.scores[n], tau)
    return [(f, int(sm.labels[n, f]), int(pred[f])) for f in range(sm.F)]


def write_strip_csv(rows, path) -> None:
    _write_rows(path, ["bin", "truth", "prediction"], rows)
