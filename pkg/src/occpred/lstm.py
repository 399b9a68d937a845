"""
Single-layer LSTM over K-step sequences of F-bin occupancy vectors.

Cell (gates stacked in the order input, forget, output, candidate)::

    i = sig(W_i x + U_i h + b_i)     f = sig(W_f x + U_f h + b_f)
    o = sig(W_o x + U_o h + b_o)     g = tanh(W_g x + U_g h + b_g)
    c' = f * c + i * g               h' = o * tanh(c')

The final hidden state goes through a dense readout to F logits, one per
bin, trained with mean sigmoid cross-entropy by full backpropagation through
time. Everything runs in float64 numpy.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError, TrainingError

GATES = ("i", "f", "o", "g")
PARAM_NAMES = ("W", "U", "b", "V", "c")


@dataclass(frozen=True)
class TrainConfig:
    hidden_size: int = 64
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"
    grad_clip_norm: float | None = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.hidden_size < 1 or self.epochs < 0 or self.batch_size < 1:
            raise InputError("hidden_size and batch_size must be >= 1, epochs >= 0")
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise InputError(f"unknown optimizer {self.optimizer!r}")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise InputError("grad_clip_norm must be positive or None")


@dataclass
class LstmWeights:
    W: np.ndarray  # (4H, F) input weights, gate blocks stacked i, f, o, g
    U: np.ndarray  # (4H, H) recurrent weights
    b: np.ndarray  # (4H,)
    V: np.ndarray  # (F, H) readout
    c: np.ndarray  # (F,)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def F(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        H = self.hidden_size
        k = GATES.index(name)
        s = slice(k * H, (k + 1) * H)
        return self.W[s], self.U[s], self.b[s]

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def copy(self) -> "LstmWeights":
        return LstmWeights(*(getattr(self, n).copy() for n in PARAM_NAMES))

    def validate(self) -> None:
        H, F = self.hidden_size, self.F
        expected = {"W": (4 * H, F), "U": (4 * H, H), "b": (4 * H,), "V": (F, H), "c": (F,)}
        for n, shape in expected.items():
            a = getattr(self, n)
            if a.shape != shape:
                raise InputError(f"{n} has shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise InputError(f"{n} contains non-finite values")

    def to_dict(self) -> dict:
        out = {"hidden_size": self.hidden_size, "F": self.F}
        for g in GATES:
            W, U, b = self.gate(g)
            out[f"W_{g}"] = {"shape": list(W.shape), "data": W.ravel().tolist()}
            out[f"U_{g}"] = {"shape": list(U.shape), "data": U.ravel().tolist()}
            out[f"b_{g}"] = {"shape": list(b.shape), "data": b.tolist()}
        out["V"] = {"shape": list(self.V.shape), "data": self.V.ravel().tolist()}
        out["c"] = {"shape": list(self.c.shape), "data": self.c.tolist()}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "LstmWeights":
        def arr(key):
            return np.asarray(d[key]["data"], dtype=np.float64).reshape(d[key]["shape"])

        w = cls(
            np.concatenate([arr(f"W_{g}") for g in GATES]),
            np.concatenate([arr(f"U_{g}") for g in GATES]),
            np.concatenate([arr(f"b_{g}") for g in GATES]),
            arr("V"),
            arr("c"),
        )
        w.validate()
        return w


def init_weights(F: int, hidden_size: int, rng: np.random.Generator) -> LstmWeights:
    """Uniform(+-1/sqrt(H)) init, forget-gate bias 1, zero readout bias."""
    H = hidden_size
    s = 1.0 / math.sqrt(H)
    b = rng.uniform(-s, s, 4 * H)
    b[H : 2 * H] = 1.0
    return LstmWeights(
        rng.uniform(-s, s, (4 * H, F)),
        rng.uniform(-s, s, (4 * H, H)),
        b,
        rng.uniform(-s, s, (F, H)),
        np.zeros(F),
    )


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def cell_forward(x, h, c, weights: LstmWeights):
    """One step; works on single vectors or on batches along the leading axis."""
    x, h, c = (np.asarray(a, dtype=np.float64) for a in (x, h, c))
    H = weights.hidden_size
    if x.shape[-1] != weights.F or h.shape[-1] != H or c.shape[-1] != H:
        raise InputError(f"cell expects x[..., {weights.F}], h/c[..., {H}]; got {x.shape}, {h.shape}, {c.shape}")
    z = x @ weights.W.T + h @ weights.U.T + weights.b
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H : 2 * H])
    o = _sigmoid(z[..., 2 * H : 3 * H])
    g = np.tanh(z[..., 3 * H :])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def _as_batch(seq, weights: LstmWeights, K: int | None):
    x = np.asarray(seq, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != weights.F:
        raise InputError(f"expected (K, {weights.F}) or (B, K, {weights.F}) input, got {np.shape(seq)}")
    if K is not None and x.shape[1] != K:
        raise InputError(f"sequence length {x.shape[1]} != K={K}")
    return x, single


def _forward_cached(x, weights: LstmWeights):
    B, K, _ = x.shape
    H = weights.hidden_size
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t in range(K):
        z = x[:, t] @ weights.W.T + h @ weights.U.T + weights.b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        o = _sigmoid(z[:, 2 * H : 3 * H])
        g = np.tanh(z[:, 3 * H :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        steps.append((i, f, o, g, c_prev, h_prev, tc))
    logits = h @ weights.V.T + weights.c
    return logits, (x, steps, h)


def forward(seq, weights: LstmWeights, K: int | None = None) -> np.ndarray:
    """Logits after running the cell over the sequence from a zero state."""
    x, single = _as_batch(seq, weights, K)
    logits, _ = _forward_cached(x, weights)
    return logits[0] if single else logits


def loss(logits, targets) -> float:
    """Mean sigmoid cross-entropy over bins (and over examples for 2-D input)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise InputError(f"logits {z.shape} and targets {y.shape} differ in shape")
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def _backward(weights: LstmWeights, cache, logits, y):
    x, steps, h_last = cache
    B = logits.shape[0]
    H = weights.hidden_size
    dlogits = (_sigmoid(logits) - y) / logits.size
    grads = {
        "V": dlogits.T @ h_last,
        "c": dlogits.sum(axis=0),
        "W": np.zeros_like(weights.W),
        "U": np.zeros_like(weights.U),
        "b": np.zeros_like(weights.b),
    }
    dh = dlogits @ weights.V
    dc_next = np.zeros((B, H))
    dz = np.empty((B, 4 * H))
    for t in range(len(steps) - 1, -1, -1):
        i, f, o, g, c_prev, h_prev, tc = steps[t]
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = do * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        grads["W"] += dz.T @ x[:, t]
        grads["U"] += dz.T @ h_prev
        grads["b"] += dz.sum(axis=0)
        dh = dz @ weights.U
    return grads


def loss_and_grads(weights: LstmWeights, seqs, targets):
    x, single = _as_batch(seqs, weights, None)
    y = np.asarray(targets, dtype=np.float64)
    if single:
        y = y[None]
    logits, cache = _forward_cached(x, weights)
    return loss(logits, y), _backward(weights, cache, logits, y)


def clip_gradients(grads: dict, max_norm: float | None):
    """Rescale to global L2 norm ``max_norm``; returns (grads, pre-clip norm)."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


class _Adam:
    def __init__(self, weights: LstmWeights, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in weights.params().items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.params().items()}
        self.t = 0

    def step(self, weights: LstmWeights, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in weights.params().items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class _SGD:
    def __init__(self, weights, lr):
        self.lr = lr

    def step(self, weights: LstmWeights, grads):
        for k, p in weights.params().items():
            p -= self.lr * grads[k]


@dataclass
class LstmModel:
    weights: LstmWeights
    config: TrainConfig
    K: int
    loss_history: list[float] = field(default_factory=list)

    @property
    def F(self) -> int:
        return self.weights.F

    def predict_proba(self, sequences) -> np.ndarray:
        return _sigmoid(forward(sequences, self.weights, self.K))

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "K": self.K,
            "weights": self.weights.to_dict(),
            "loss_history": self.loss_history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LstmModel":
        return cls(LstmWeights.from_dict(d["weights"]), TrainConfig(**d["config"]), int(d["K"]), d["loss_history"])


def train(ds, config: TrainConfig | None = None) -> LstmModel:
    """Mini-batch BPTT on the sequence view of a windowed dataset.

    Batches follow a seeded permutation per epoch; ``loss_history`` holds the
    mean training loss of each epoch.
    """
    config = config or TrainConfig()
    if ds.N == 0:
        raise InputError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    weights = init_weights(ds.F, config.hidden_size, rng)
    opt = _Adam(weights, config.learning_rate) if config.optimizer == "adam" else _SGD(weights, config.learning_rate)
    X, Y = ds.sequences, ds.targets
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(ds.N)
        total = 0.0
        for bi, start in enumerate(range(0, ds.N, config.batch_size)):
            rows = np.sort(order[start : start + config.batch_size])
            batch_loss, grads = loss_and_grads(weights, X[rows], Y[rows])
            if not math.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            grads, _ = clip_gradients(grads, config.grad_clip_norm)
            opt.step(weights, grads)
            total += batch_loss * rows.size
        history.append(total / ds.N)
    return LstmModel(weights, config, ds.K, history)


def grad_check(weights: LstmWeights, sample, epsilon: float = 1e-4, n_params: int = 50, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``sample`` is a (sequences, targets) pair, single example or batch. The
    error for one parameter is |ga - gfd| / max(1e-8, |ga| + |gfd|).
    """
    seqs, targets = sample
    _, grads = loss_and_grads(weights, seqs, targets)
    rng = np.random.default_rng(seed)
    names = list(PARAM_NAMES)
    sizes = np.array([getattr(weights, n).size for n in names])
    picks = rng.choice(sizes.sum(), size=min(n_params, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    w = weights.copy()
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(bounds, flat, side="right"))
        j = int(flat - (bounds[k - 1] if k else 0))
        arr = getattr(w, names[k]).reshape(-1)
        old = arr[j]
        arr[j] = old + epsilon
        lp, _ = loss_and_grads(w, seqs, targets)
        arr[j] = old - epsilon
        lm, _ = loss_and_grads(w, seqs, targets)
        arr[j] = old
        g_fd = (lp - lm) / (2 * epsilon)
        g_a = float(grads[names[k]].reshape(-1)[j])
        worst = max(worst, abs(g_a - g_fd) / max(1e-8, abs(g_a) + abs(g_fd)))
    return worst
