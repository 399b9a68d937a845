"""
Random forest over binary features, written from scratch.

Each tree is grown on a bootstrap sample; at every node ``mtry`` candidate
features are drawn without replacement and the one with the largest Gini
impurity decrease is used. Because features are 0/1, a split is always
"x_j == 0 goes left, x_j == 1 goes right", so no threshold search is needed.
Leaves keep their class counts and a forest scores a row by the mean leaf
class-1 fraction over its trees.

Multi-output prediction trains one forest per frequency bin on the shared
feature matrix (`MultiOutputModel`).

Randomness: tree ``t`` of bin ``b`` draws from ``default_rng([seed, b, t])``;
the per-node feature draws use a splitmix64 stream keyed from that generator,
so results do not depend on training order or thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .errors import InputError

# Above this node size, exact int64 comparison of split scores could overflow.
_EXACT_COMPARE_MAX_N = 8000


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 12
    min_samples_leaf: int = 5
    mtry: int | None = None  # None -> ceil(sqrt(n_features))

    def __post_init__(self):
        if self.n_trees < 1:
            raise InputError("n_trees must be >= 1")
        if self.max_depth < 0:
            raise InputError("max_depth must be >= 0")
        if self.min_samples_leaf < 1:
            raise InputError("min_samples_leaf must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise InputError("mtry must be >= 1")

    def resolved_mtry(self, n_features: int) -> int:
        m = self.mtry if self.mtry is not None else math.ceil(math.sqrt(n_features))
        return min(m, n_features)


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _splitmix64(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def _randbelow(state, m):
    u = np.float64(_splitmix64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    return int(u * m)


@numba.njit(cache=True, nogil=True)
def _less(num1, den1, num2, den2, exact):
    # num1/den1 < num2/den2 with positive denominators
    if exact:
        return num1 * den2 < num2 * den1
    return num1 / den1 < num2 / den2


@numba.njit(cache=True, nogil=True)
def _best_split(XT, y, idx, start, end, cands, min_leaf):
    """Best candidate split of rows ``idx[start:end]``; ``XT`` is feature-major (P, N).

    Weighted child Gini impurity is 2 * D / n with
    D = pl*ql/nl + pr*qr/nr (p = positives, q = negatives per side), so the
    best split minimizes D. Ties go to the lowest feature index. Returns
    (feature, D numerator, D denominator, positives), feature -1 when nothing helps.
    """
    n = end - start
    pos = 0
    for k in range(start, end):
        pos += y[idx[k]]
    neg = n - pos
    exact = n <= _EXACT_COMPARE_MAX_N

    # parent: D = pos*neg/n
    best_f = -1
    best_num = pos * neg
    best_den = n
    for c in range(cands.size):
        f = cands[c]
        col = XT[f]
        nr = 0
        pr = 0
        for k in range(start, end):
            r = idx[k]
            if col[r]:
                nr += 1
                pr += y[r]
        nl = n - nr
        if nl < min_leaf or nr < min_leaf:
            continue
        pl = pos - pr
        num = pl * (nl - pl) * nr + pr * (nr - pr) * nl
        den = nl * nr
        if best_f < 0:
            better = _less(num, den, best_num, best_den, exact)
        elif _less(num, den, best_num, best_den, exact):
            better = True
        elif _less(best_num, best_den, num, den, exact):
            better = False
        else:
            better = f < best_f
        if better:
            best_f, best_num, best_den = f, num, den
    return best_f, best_num, best_den, pos


@numba.njit(cache=True, nogil=True)
def _grow_tree(XT, y, sample_idx, max_depth, min_leaf, mtry, key):
    N = sample_idx.size
    P = XT.shape[0]
    cap = 2 * N + 1
    if max_depth < 30:
        cap = min(cap, (1 << (max_depth + 1)) - 1)
    feature = np.full(cap, -1, dtype=np.int32)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    n0 = np.zeros(cap, dtype=np.int32)
    n1 = np.zeros(cap, dtype=np.int32)

    idx = sample_idx.copy()
    perm = np.arange(P)
    state = np.empty(1, dtype=np.uint64)
    state[0] = key

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    sp = 0
    st_node[0], st_start[0], st_end[0], st_depth[0] = 0, 0, N, 0
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node, start, end, depth = st_node[sp], st_start[sp], st_end[sp], st_depth[sp]
        n = end - start
        pos = 0
        for k in range(start, end):
            pos += y[idx[k]]
        n0[node] = n - pos
        n1[node] = pos
        if depth >= max_depth or pos == 0 or pos == n or n < 2 * min_leaf:
            continue

        for i in range(mtry):
            j = i + _randbelow(state, P - i)
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
        best_f, _, _, _ = _best_split(XT, y, idx, start, end, perm[:mtry], min_leaf)
        if best_f < 0:
            continue

        # partition: x == 0 to the front (left), x == 1 to the back (right)
        i, j = start, end - 1
        while i <= j:
            if XT[best_f, idx[i]] == 0:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        mid = i

        feature[node] = best_f
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[sp], st_start[sp], st_end[sp], st_depth[sp] = n_nodes + 1, mid, end, depth + 1
        sp += 1
        st_node[sp], st_start[sp], st_end[sp], st_depth[sp] = n_nodes, start, mid, depth + 1
        sp += 1
        n_nodes += 2

    return feature[:n_nodes], left[:n_nodes], right[:n_nodes], n0[:n_nodes], n1[:n_nodes]


@numba.njit(cache=True, nogil=True)
def _predict_packed(X, feature, left, right, frac, roots):
    N = X.shape[0]
    out = np.zeros(N)
    for r in range(N):
        row = X[r]
        acc = 0.0
        for t in range(roots.size):
            node = roots[t]
            while feature[node] >= 0:
                if row[feature[node]]:
                    node = right[node]
                else:
                    node = left[node]
            acc += frac[node]
        out[r] = acc / roots.size
    return out


# ---------------------------------------------------------------------------
# Python surface
# ---------------------------------------------------------------------------


def _as_features(X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 2:
        raise InputError(f"feature matrix must be 2-D, got shape {X.shape}")
    return np.ascontiguousarray(X, dtype=np.uint8)


def _feature_major(X) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(X, dtype=np.uint8).T)


def best_split(X, y, candidate_features, min_samples_leaf: int = 1):
    """Best Gini split among ``candidate_features`` over all rows of (X, y).

    Returns ``(feature_index, impurity_decrease)`` or None when no candidate
    reduces impurity with both children holding >= ``min_samples_leaf`` rows.
    """
    X = _as_features(X)
    y = np.ascontiguousarray(y, dtype=np.int64)
    cands = np.asarray(candidate_features, dtype=np.int64)
    if cands.size == 0:
        raise InputError("candidate_features must be nonempty")
    n = X.shape[0]
    if n == 0:
        return None
    idx = np.arange(n, dtype=np.int64)
    f, num, den, pos = _best_split(_feature_major(X), y, idx, 0, n, cands, min_samples_leaf)
    if f < 0:
        return None
    neg = n - pos
    decrease = 2.0 * pos * neg / (n * n) - 2.0 * (num / den) / n
    return int(f), float(decrease)


@dataclass
class Tree:
    """Node-list tree; ``feature == -1`` marks a leaf. Node 0 is the root."""

    feature: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n0: np.ndarray
    n1: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def leaf_fraction(self) -> np.ndarray:
        tot = self.n0 + self.n1
        return np.divide(self.n1, tot, out=np.zeros(tot.size), where=tot > 0)

    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):  # children always have larger indices
            if self.feature[i] >= 0:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max())

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "left", "right", "n0", "n1")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(*(np.asarray(d[k], dtype=np.int32) for k in ("feature", "left", "right", "n0", "n1")))


@dataclass
class ForestModel:
    trees: list[Tree]
    params: ForestParams
    seed: int
    n_features: int
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    def packed(self):
        if self._packed is None:
            offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
            shift = lambda a, o: np.where(a >= 0, a + o, -1)  # noqa: E731
            self._packed = (
                np.concatenate([t.feature for t in self.trees]).astype(np.int64),
                np.concatenate([shift(t.left, o) for t, o in zip(self.trees, offsets)]).astype(np.int64),
                np.concatenate([shift(t.right, o) for t, o in zip(self.trees, offsets)]).astype(np.int64),
                np.concatenate([t.leaf_fraction for t in self.trees]),
                offsets[:-1].astype(np.int64),
            )
        return self._packed

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "seed": self.seed,
            "n_features": self.n_features,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls(
            [Tree.from_dict(t) for t in d["trees"]],
            ForestParams(**d["params"]),
            int(d["seed"]),
            int(d["n_features"]),
        )


def fit_tree(X, y, sample_idx, params: ForestParams, rng: np.random.Generator, XT=None) -> Tree:
    """Grow one tree on rows ``sample_idx`` (duplicates allowed).

    ``XT`` is an optional precomputed feature-major copy of X.
    """
    X = _as_features(X)
    if XT is None:
        XT = _feature_major(X)
    y = np.ascontiguousarray(y, dtype=np.int64)
    sample_idx = np.ascontiguousarray(sample_idx, dtype=np.int64)
    if sample_idx.size == 0:
        raise InputError("cannot grow a tree on an empty sample")
    key = np.uint64(rng.integers(0, 2**63, dtype=np.uint64))
    arrays = _grow_tree(
        XT, y, sample_idx, params.max_depth, params.min_samples_leaf, params.resolved_mtry(X.shape[1]), key
    )
    return Tree(*arrays)


def fit_forest(
    X, y, params: ForestParams | None = None, seed: int = 0, stream: tuple[int, ...] = (), XT=None
) -> ForestModel:
    """Forest of ``params.n_trees`` trees; ``stream`` extends the RNG key (e.g. the bin index)."""
    params = params or ForestParams()
    X = _as_features(X)
    y = np.ascontiguousarray(y, dtype=np.int64)
    N = X.shape[0]
    if N == 0 or y.shape != (N,):
        raise InputError(f"need matching nonempty X and y, got {X.shape} and {y.shape}")
    if XT is None:
        XT = _feature_major(X)
    trees = []
    for t in range(params.n_trees):
        rng = np.random.default_rng([seed, *stream, t])
        boot = rng.integers(0, N, size=N)
        trees.append(fit_tree(X, y, boot, params, rng, XT=XT))
    return ForestModel(trees, params, seed, X.shape[1])


def predict_tree_proba(tree: Tree, X) -> np.ndarray:
    X = _as_features(X)
    return _predict_packed(
        X, tree.feature.astype(np.int64), tree.left.astype(np.int64), tree.right.astype(np.int64),
        tree.leaf_fraction, np.zeros(1, dtype=np.int64),
    )


def predict_proba(model, X) -> np.ndarray:
    """Mean leaf class-1 fraction; (N,) for a forest, (N, F) for a multi-output model."""
    if isinstance(model, MultiOutputModel):
        return model.predict_proba(X)
    X = _as_features(X)
    if X.shape[1] != model.n_features:
        raise InputError(f"model expects {model.n_features} features, got {X.shape[1]}")
    return _predict_packed(X, *model.packed())


# ---------------------------------------------------------------------------
# Multi-output wrapper (one model per bin, shared feature matrix)
# ---------------------------------------------------------------------------


@dataclass
class MultiOutputModel:
    method: str
    K: int
    F: int
    per_bin: list
    seed: int = 0

    @property
    def n_features(self) -> int:
        return self.K * self.F

    def predict_proba(self, X) -> np.ndarray:
        X = _as_features(X)
        if X.shape[1] != self.n_features:
            raise InputError(f"model expects {self.n_features} features (K={self.K}, F={self.F}), got {X.shape[1]}")
        predict = _PREDICTORS[self.method]
        return np.stack([predict(m, X) for m in self.per_bin], axis=1)


_PREDICTORS = {"rf": predict_proba}


def fit_per_bin(fit_one, X, Y, n_jobs: int = 1) -> list:
    """Apply ``fit_one(X, y_bin, bin_index)`` to every column of Y, in bin order."""
    X = _as_features(X)
    Y = np.asarray(Y)
    cols = [np.ascontiguousarray(Y[:, f], dtype=np.int64) for f in range(Y.shape[1])]
    if n_jobs <= 1:
        return [fit_one(X, y, f) for f, y in enumerate(cols)]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(lambda fy: fit_one(X, fy[1], fy[0]), enumerate(cols)))


def fit_forest_multi(ds, params: ForestParams | None = None, seed: int = 0, n_jobs: int = 1) -> MultiOutputModel:
    params = params or ForestParams()
    XT = _feature_major(ds.features)
    models = fit_per_bin(
        lambda X, y, f: fit_forest(X, y, params, seed, stream=(f,), XT=XT), ds.features, ds.targets, n_jobs
    )
    return MultiOutputModel("rf", ds.K, ds.F, models, seed)
