"""
First-order two-state Markov baseline.

Per bin, transition probabilities come from additively smoothed counts:
p(a->b) = (n_ab + alpha) / (n_a0 + n_a1 + 2 alpha). The one-step-ahead score
for the next minute is p01 when the previous state is idle and p11 otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .occupancy import OccupancyGrid

DEFAULT_ALPHA = 1.0
DEFAULT_TAU = 0.5


@dataclass(frozen=True)
class TransitionModel:
    counts: np.ndarray  # (F, 2, 2) int, counts[f, a, b] = #(a -> b)
    alpha: float
    last_train_state: np.ndarray  # (F,) uint8

    @property
    def F(self) -> int:
        return self.counts.shape[0]

    def _row(self, a: int) -> np.ndarray:
        return self.counts[:, a, :].sum(axis=1) + 2.0 * self.alpha

    @property
    def p01(self) -> np.ndarray:
        return (self.counts[:, 0, 1] + self.alpha) / self._row(0)

    @property
    def p00(self) -> np.ndarray:
        return (self.counts[:, 0, 0] + self.alpha) / self._row(0)

    @property
    def p11(self) -> np.ndarray:
        return (self.counts[:, 1, 1] + self.alpha) / self._row(1)

    @property
    def p10(self) -> np.ndarray:
        return (self.counts[:, 1, 0] + self.alpha) / self._row(1)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "bins": [
                {
                    "p00": float(a), "p01": float(b), "p10": float(c), "p11": float(d),
                    "counts": self.counts[f].ravel().tolist(),
                }
                for f, (a, b, c, d) in enumerate(zip(self.p00, self.p01, self.p10, self.p11))
            ],
            "last_train_state": self.last_train_state.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionModel":
        counts = np.array([b["counts"] for b in d["bins"]], dtype=np.int64).reshape(-1, 2, 2)
        return cls(counts, float(d["alpha"]), np.asarray(d["last_train_state"], dtype=np.uint8))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def fit_markov(train: OccupancyGrid, alpha: float = DEFAULT_ALPHA) -> TransitionModel:
    if not alpha > 0:
        raise InputError(f"smoothing alpha must be positive, got {alpha}")
    if train.T < 2:
        raise InputError("need at least two minutes to count transitions")
    v = train.values.astype(np.int64)
    prev, nxt = v[:, :-1], v[:, 1:]
    counts = np.empty((train.F, 2, 2), dtype=np.int64)
    for a in (0, 1):
        for b in (0, 1):
            counts[:, a, b] = np.count_nonzero((prev == a) & (nxt == b), axis=1)
    return TransitionModel(counts, float(alpha), train.values[:, -1].copy())


def predict_markov(model: TransitionModel, prev_state) -> np.ndarray:
    """Occupancy score for the next minute given the previous state(s).

    ``prev_state`` is (F,) or (N, F); the result has the same shape.
    """
    prev = np.asarray(prev_state)
    if prev.shape[-1] != model.F:
        raise InputError(f"prev_state has {prev.shape[-1]} bins, model has {model.F}")
    return np.where(prev == 1, model.p11, model.p01)


def predict_stream(model: TransitionModel, test: OccupancyGrid) -> np.ndarray:
    """Scores for every test minute, shape (T, F).

    Minute t uses the observed state at t-1; the first test minute is seeded
    with the last training state.
    """
    prev = np.concatenate([model.last_train_state[:, None], test.values[:, :-1]], axis=1)
    return predict_markov(model, prev.T)


def decide(score, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Hard decision: occupied iff score > tau (ties go to idle)."""
    return (np.asarray(score) > tau).astype(np.uint8)


def bayes_accuracy(p01: float, p10: float) -> float:
    """Best achievable one-step accuracy on a stationary chain with known transitions."""
    if p01 + p10 == 0:
        return 1.0
    pi1 = p01 / (p01 + p10)
    return (1 - pi1) * max(p01, 1 - p01) + pi1 * max(p10, 1 - p10)
