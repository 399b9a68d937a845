"""
Gradient-boosted regression trees with the binary logistic objective.

Each round computes per-row gradient g = p - y and Hessian h = p (1 - p) at
the current margins, grows a depth-limited tree on (g, h) and adds its leaf
values -eta * G / (H + lambda) to the margins. Split quality is the usual
second-order gain

    0.5 * [GL^2/(HL+lam) + GR^2/(HR+lam) - (GL+GR)^2/(HL+HR+lam)] - gamma

and a split is kept only when the gain is positive and both children carry
at least ``min_child_hessian``.

With 0/1 features every feature offers exactly one cut, so a node's
"histogram" is just the (G, H) sums over rows where the feature is 1; the
x == 0 side is the node total minus that. The larger child's histogram is
obtained by subtracting the smaller child's from the parent's.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .errors import InputError
from .forest import MultiOutputModel, _PREDICTORS, _as_features, fit_per_bin

BASE_SCORE_CLAMP = 10.0


@dataclass(frozen=True)
class GBTParams:
    n_rounds: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_hessian: float = 1.0

    def __post_init__(self):
        if self.n_rounds < 0 or self.max_depth < 0:
            raise InputError("n_rounds and max_depth must be >= 0")
        if self.max_depth > 10:
            raise InputError("max_depth above 10 is not supported")
        if self.learning_rate < 0 or self.reg_lambda < 0 or self.gamma < 0 or self.min_child_hessian < 0:
            raise InputError("learning_rate, reg_lambda, gamma and min_child_hessian must be >= 0")


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logistic_grad_hess(margin, label):
    p = sigmoid(margin)
    return p - np.asarray(label, dtype=np.float64), p * (1.0 - p)


def leaf_value(G, H, reg_lambda, eta):
    if H < 0:
        raise InputError("Hessian sum must be non-negative")
    return -eta * G / (H + reg_lambda)


def split_gain(GL, HL, GR, HR, reg_lambda, gamma):
    return 0.5 * (GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda)
                  - (GL + GR) ** 2 / (HL + HR + reg_lambda)) - gamma


def logistic_loss(margin, y) -> float:
    """Mean binary cross-entropy of sigmoid(margin) against y, stable form."""
    m = np.asarray(margin, dtype=np.float64)
    return float(np.mean(np.maximum(m, 0) - m * y + np.log1p(np.exp(-np.abs(m)))))


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _histogram(X, idx, start, end, g, h, G1, H1):
    # rows outer in index order, features inner (vectorizes); order is fixed
    G1[:] = 0.0
    H1[:] = 0.0
    P = X.shape[1]
    for k in range(start, end):
        r = idx[k]
        row = X[r]
        gr = g[r]
        hr = h[r]
        for j in range(P):
            v = row[j]
            G1[j] += v * gr
            H1[j] += v * hr


@numba.njit(cache=True, nogil=True)
def _pick_split(G, H, G1, H1, lam, gamma, min_child_h):
    best_f = -1
    best_gain = 0.0
    parent = G * G / (H + lam)
    for j in range(G1.size):
        GR = G1[j]
        HR = H1[j]
        GL = G - GR
        HL = H - HR
        if HL < min_child_h or HR < min_child_h:
            continue
        gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma
        if gain > best_gain:
            best_gain = gain
            best_f = j
    return best_f, best_gain


@numba.njit(cache=True, nogil=True)
def _grow_reg_tree(X, g, h, max_depth, lam, gamma, min_child_h, eta):
    """Depth-first growth on row-major X; returns node arrays and each row's leaf value."""
    N, P = X.shape
    cap = (1 << (max_depth + 1)) - 1
    feature = np.full(cap, -1, dtype=np.int32)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap)
    row_value = np.empty(N)

    idx = np.arange(N)
    hist_G = np.empty((cap, P))
    hist_H = np.empty((cap, P))
    tot_G = np.empty(cap)
    tot_H = np.empty(cap)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)

    sg = 0.0
    sh = 0.0
    for r in range(N):
        sg += g[r]
        sh += h[r]
    tot_G[0] = sg
    tot_H[0] = sh
    if max_depth > 0:
        _histogram(X, idx, 0, N, g, h, hist_G[0], hist_H[0])
    st_node[0], st_start[0], st_end[0], st_depth[0] = 0, 0, N, 0
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node, start, end, depth = st_node[sp], st_start[sp], st_end[sp], st_depth[sp]
        G = tot_G[node]
        H = tot_H[node]
        best_f = -1
        if depth < max_depth:
            best_f, _ = _pick_split(G, H, hist_G[node], hist_H[node], lam, gamma, min_child_h)
        if best_f < 0:
            v = -eta * G / (H + lam)
            value[node] = v
            for k in range(start, end):
                row_value[idx[k]] = v
            continue

        i, j = start, end - 1
        while i <= j:
            if X[idx[i], best_f] == 0:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        mid = i
        # ascending row order within each child keeps the summation order fixed
        idx[start:mid].sort()
        idx[mid:end].sort()

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        left[node] = lc
        right[node] = rc
        tot_G[rc] = hist_G[node, best_f]
        tot_H[rc] = hist_H[node, best_f]
        tot_G[lc] = G - tot_G[rc]
        tot_H[lc] = H - tot_H[rc]

        if depth + 1 < max_depth:
            if mid - start <= end - mid:
                small, big, s0, s1 = lc, rc, start, mid
            else:
                small, big, s0, s1 = rc, lc, mid, end
            _histogram(X, idx, s0, s1, g, h, hist_G[small], hist_H[small])
            for f in range(P):
                hist_G[big, f] = hist_G[node, f] - hist_G[small, f]
                hist_H[big, f] = hist_H[node, f] - hist_H[small, f]

        st_node[sp], st_start[sp], st_end[sp], st_depth[sp] = rc, mid, end, depth + 1
        sp += 1
        st_node[sp], st_start[sp], st_end[sp], st_depth[sp] = lc, start, mid, depth + 1
        sp += 1

    return feature[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes], row_value


@numba.njit(cache=True, nogil=True)
def _predict_margin(X, feature, left, right, value, roots, base):
    N = X.shape[0]
    out = np.empty(N)
    for r in range(N):
        row = X[r]
        acc = base
        for t in range(roots.size):
            node = roots[t]
            while feature[node] >= 0:
                if row[feature[node]]:
                    node = right[node]
                else:
                    node = left[node]
            acc += value[node]
        out[r] = acc
    return out


# ---------------------------------------------------------------------------
# Python surface
# ---------------------------------------------------------------------------


def histogram_split(X, g, h, params: GBTParams, rows=None):
    """Best (feature, gain) for one node holding ``rows``, or None."""
    X = _as_features(X)
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    idx = np.arange(X.shape[0]) if rows is None else np.asarray(rows, dtype=np.int64)
    G1 = np.empty(X.shape[1])
    H1 = np.empty(X.shape[1])
    _histogram(X, idx, 0, idx.size, g, h, G1, H1)
    f, gain = _pick_split(
        float(g[idx].sum()), float(h[idx].sum()), G1, H1,
        params.reg_lambda, params.gamma, params.min_child_hessian,
    )
    return None if f < 0 else (int(f), float(gain))


@dataclass
class RegTree:
    feature: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "RegTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int32),
            np.asarray(d["left"], dtype=np.int32),
            np.asarray(d["right"], dtype=np.int32),
            np.asarray(d["value"], dtype=np.float64),
        )


@dataclass
class GBTModel:
    base_score: float
    rounds: list[RegTree]
    params: GBTParams
    n_features: int
    seed: int = 0
    constant_score: float | None = None
    loss_curve: list[float] = field(default_factory=list)

    def margin(self, X, n_rounds: int | None = None) -> np.ndarray:
        X = _as_features(X)
        if X.shape[1] != self.n_features:
            raise InputError(f"model expects {self.n_features} features, got {X.shape[1]}")
        trees = self.rounds if n_rounds is None else self.rounds[:n_rounds]
        if not trees:
            return np.full(X.shape[0], self.base_score)
        offsets = np.cumsum([0] + [t.n_nodes for t in trees])
        shift = lambda a, o: np.where(a >= 0, a + o, -1).astype(np.int64)  # noqa: E731
        return _predict_margin(
            X,
            np.concatenate([t.feature for t in trees]).astype(np.int64),
            np.concatenate([shift(t.left, o) for t, o in zip(trees, offsets)]),
            np.concatenate([shift(t.right, o) for t, o in zip(trees, offsets)]),
            np.concatenate([t.value for t in trees]),
            offsets[:-1].astype(np.int64),
            self.base_score,
        )

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "params": asdict(self.params),
            "n_features": self.n_features,
            "seed": self.seed,
            "constant_score": self.constant_score,
            "rounds": [t.to_dict() for t in self.rounds],
            "loss_curve": self.loss_curve,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GBTModel":
        return cls(
            float(d["base_score"]),
            [RegTree.from_dict(t) for t in d["rounds"]],
            GBTParams(**d["params"]),
            int(d["n_features"]),
            int(d.get("seed", 0)),
            d.get("constant_score"),
            list(d.get("loss_curve", [])),
        )


def _logit(p: float) -> float:
    with np.errstate(divide="ignore"):
        z = math.log(p) - math.log1p(-p) if 0 < p < 1 else math.copysign(math.inf, p - 0.5)
    return float(np.clip(z, -BASE_SCORE_CLAMP, BASE_SCORE_CLAMP))


def fit_gbt(X, y, params: GBTParams | None = None, seed: int = 0) -> GBTModel:
    """Boosted trees for one binary target. ``seed`` is recorded; growth itself is deterministic."""
    params = params or GBTParams()
    X = _as_features(X)
    y = np.asarray(y, dtype=np.float64)
    N = X.shape[0]
    if N == 0 or y.shape != (N,):
        raise InputError(f"need matching nonempty X and y, got {X.shape} and {y.shape}")
    n_pos = float(y.sum())
    if n_pos == 0 or n_pos == N:
        rate = (n_pos + 1.0) / (N + 2.0)
        return GBTModel(_logit(rate), [], params, X.shape[1], seed, constant_score=rate)

    base = _logit(n_pos / N)
    margin = np.full(N, base)
    curve = [logistic_loss(margin, y)]
    rounds = []
    for _ in range(params.n_rounds):
        g, h = logistic_grad_hess(margin, y)
        feat, left, right, value, row_value = _grow_reg_tree(
            X, g, h, params.max_depth, params.reg_lambda, params.gamma,
            params.min_child_hessian, params.learning_rate,
        )
        rounds.append(RegTree(feat, left, right, value))
        margin = margin + row_value
        curve.append(logistic_loss(margin, y))
    return GBTModel(base, rounds, params, X.shape[1], seed, loss_curve=curve)


def predict_gbt(model: GBTModel, X) -> np.ndarray:
    if model.constant_score is not None:
        X = _as_features(X)
        if X.shape[1] != model.n_features:
            raise InputError(f"model expects {model.n_features} features, got {X.shape[1]}")
        return np.full(X.shape[0], model.constant_score)
    return sigmoid(model.margin(X))


_PREDICTORS["gbt"] = predict_gbt


def fit_gbt_multi(ds, params: GBTParams | None = None, seed: int = 0, n_jobs: int = 1) -> MultiOutputModel:
    params = params or GBTParams()
    models = fit_per_bin(lambda X, y, f: fit_gbt(X, y, params, seed), ds.features, ds.targets, n_jobs)
    return MultiOutputModel("gbt", ds.K, ds.F, models, seed)
