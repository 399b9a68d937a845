"""
Synthetic occupancy traces and power sweeps with known generating dynamics.

Four channel kinds are supported:

- ``markov``   two-state chain with P(0->1) = p01 and P(1->0) = p10, starting in ``state``
- ``periodic`` square wave of ``period_min`` minutes, ``duty`` fraction on, each
               minute flipped independently with ``jitter_prob``
- ``static``   constant ``state``, each minute flipped independently with ``flip_prob``
- ``lagged``   s_t = 1 iff bias + sum_i weights[i] * s_{t-1-i} + N(0, noise^2) > 0;
               the default weights (zeros with -1 on the oldest lag) give a
               square wave of period 2*order, which a first-order model cannot follow

Every bin draws from its own RNG stream seeded with ``seed ^ bin_index`` so
bins can be generated in any order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import InputError
from .occupancy import OccupancyGrid, PowerSweep

KINDS = ("markov", "periodic", "static", "lagged")

NOISE_JITTER_DB = 3.0


@dataclass(frozen=True)
class ChannelSpec:
    kind: str
    p01: float = 0.1
    p10: float = 0.1
    period_min: int = 60
    duty: float = 0.5
    jitter_prob: float = 0.0
    state: int = 0
    flip_prob: float = 0.0
    order: int = 3
    weights: tuple[float, ...] | None = None
    bias: float = 0.5
    noise: float = 0.1
    seed: int | None = None

    def __post_init__(self):
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InputError(f"unknown channel kind {self.kind!r}; expected one of {KINDS}")
        for name in ("p01", "p10", "jitter_prob", "flip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise InputError(f"{name}={p} is not a probability")
        if self.state not in (0, 1):
            raise InputError("state must be 0 or 1")
        if self.kind == "periodic":
            if self.period_min < 2:
                raise InputError("period_min must be >= 2")
            if not 0.0 < self.duty < 1.0:
                raise InputError("duty must lie in (0, 1)")
        if self.kind == "lagged":
            if self.order < 2:
                raise InputError("lagged order must be >= 2")
            if self.weights is not None and len(self.weights) != self.order:
                raise InputError(f"expected {self.order} weights, got {len(self.weights)}")
            if self.noise < 0:
                raise InputError("noise must be non-negative")

    def lag_weights(self) -> np.ndarray:
        if self.weights is not None:
            return np.asarray(self.weights, dtype=np.float64)
        w = np.zeros(self.order)
        w[-1] = -1.0
        return w

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["weights"] is not None:
            d["weights"] = list(d["weights"])
        return d


@dataclass(frozen=True)
class BandSpec:
    channels: tuple[ChannelSpec, ...]
    T: int
    noise_floor: float = -100.0
    burst_power: float = -60.0
    samples_per_minute: int = 4
    points_per_bin: int = 2
    bin_width: float = 5e6
    f_start: float = 3.5e9
    start_time: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not self.channels:
            raise InputError("band needs at least one channel")
        if self.T < 2:
            raise InputError("T must be >= 2")
        if not self.burst_power > self.noise_floor:
            raise InputError("burst_power must exceed noise_floor")
        if self.samples_per_minute < 1 or self.points_per_bin < 1:
            raise InputError("samples_per_minute and points_per_bin must be >= 1")
        if not self.bin_width > 0:
            raise InputError("bin_width must be positive")

    @property
    def F(self) -> int:
        return len(self.channels)

    @property
    def midpoint_threshold(self) -> float:
        return 0.5 * (self.noise_floor + self.burst_power)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = [c.to_dict() for c in self.channels]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BandSpec":
        d = dict(d)
        try:
            channels = [ChannelSpec(**c) for c in d.pop("channels")]
            return cls(channels=channels, **d)
        except (TypeError, KeyError) as exc:
            raise InputError(f"malformed band spec: {exc}") from exc


def load_band_spec(path) -> BandSpec:
    with Path(path).open(encoding="utf-8") as fh:
        return BandSpec.from_dict(json.load(fh))


def save_band_spec(band: BandSpec, path) -> None:
    Path(path).write_text(json.dumps(band.to_dict(), indent=2) + "\n", encoding="utf-8")


@numba.njit(cache=True, nogil=True)
def _markov_walk(u, p01, p10, s0):
    out = np.empty(u.size, dtype=np.uint8)
    s = s0
    for t in range(u.size):
        out[t] = s
        if s == 0:
            s = 1 if u[t] < p01 else 0
        else:
            s = 0 if u[t] < p10 else 1
    return out


@numba.njit(cache=True, nogil=True)
def _lagged_walk(init, weights, bias, eps):
    k = weights.size
    T = eps.size
    out = np.empty(T, dtype=np.uint8)
    for t in range(T):
        if t < k:
            out[t] = init[t]
            continue
        a = bias + eps[t]
        for i in range(k):
            a += weights[i] * out[t - 1 - i]
        out[t] = 1 if a > 0.0 else 0
    return out


def gen_channel(spec: ChannelSpec, T: int, seed: int | None = None) -> np.ndarray:
    """Binary occupancy sequence of length T; ``seed`` overrides ``spec.seed``."""
    spec.validate()
    if T < 1:
        raise InputError("T must be >= 1")
    if seed is None:
        seed = spec.seed if spec.seed is not None else 0
    rng = np.random.default_rng(seed)

    if spec.kind == "static":
        flips = rng.random(T) < spec.flip_prob
        return (spec.state ^ flips).astype(np.uint8)

    if spec.kind == "markov":
        return _markov_walk(rng.random(T), spec.p01, spec.p10, spec.state)

    if spec.kind == "periodic":
        phase = int(rng.integers(spec.period_min))
        on = min(max(1, round(spec.duty * spec.period_min)), spec.period_min - 1)
        wave = ((np.arange(T) + phase) % spec.period_min) < on
        flips = rng.random(T) < spec.jitter_prob
        return (wave ^ flips).astype(np.uint8)

    # lagged
    init = rng.integers(0, 2, size=spec.order).astype(np.uint8)
    eps = rng.normal(0.0, spec.noise, size=T) if spec.noise > 0 else np.zeros(T)
    return _lagged_walk(init, spec.lag_weights(), float(spec.bias), eps)


def _stream_seed(band: BandSpec, f: int) -> int:
    ch = band.channels[f]
    base = ch.seed if ch.seed is not None else band.seed
    return int(base) ^ f


def gen_band(band: BandSpec) -> OccupancyGrid:
    values = np.stack([gen_channel(ch, band.T, _stream_seed(band, f)) for f, ch in enumerate(band.channels)])
    return OccupancyGrid(values, band.bin_width, band.start_time)


def band_freq_points(band: BandSpec) -> np.ndarray:
    m = band.points_per_bin
    offsets = (np.arange(m) + 0.5) * band.bin_width / m
    return (band.f_start + np.arange(band.F)[:, None] * band.bin_width + offsets[None, :]).ravel()


def gen_sweep(band: BandSpec, grid: OccupancyGrid | None = None) -> PowerSweep:
    """Power samples whose thresholded occupancy is exactly ``gen_band(band)``.

    Idle samples lie in [noise_floor - 3 dB, noise_floor]; each occupied minute
    carries one sample at exactly burst_power at a random (point, sample) slot.
    Every threshold in [noise_floor, burst_power) recovers the generating grid
    and every threshold at or above burst_power gives an all-idle grid.
    """
    if grid is None:
        grid = gen_band(band)
    m, S, T = band.points_per_bin, band.samples_per_minute, band.T
    power = np.empty((band.F, m, T, S))
    for f in range(band.F):
        rng = np.random.default_rng([_stream_seed(band, f), 1])
        power[f] = band.noise_floor - NOISE_JITTER_DB * rng.random((m, T, S))
        busy = np.flatnonzero(grid.values[f])
        which = rng.integers(0, m * S, size=busy.size)
        power[f, which // S, busy, which % S] = band.burst_power
    return PowerSweep.from_dense(band_freq_points(band), power.reshape(band.F * m, T, S))


def mixed_band_spec(
    T: int = 20_000,
    n_static: int = 10,
    n_markov: int = 25,
    n_periodic: int = 25,
    n_lagged: int = 30,
    seed: int = 0,
) -> BandSpec:
    """A band mixing all four channel kinds, with parameters drawn from ``seed``.

    The first half of the static channels have flip_prob = 0 (constant bins).
    Channels are laid out in kind order: static, markov, periodic, lagged.
    """
    rng = np.random.default_rng([seed, 7])
    chans: list[ChannelSpec] = []
    for k in range(n_static):
        flip = 0.0 if k < (n_static + 1) // 2 else float(rng.uniform(0.002, 0.02))
        chans.append(ChannelSpec("static", state=k % 2, flip_prob=flip))
    for _ in range(n_markov):
        chans.append(ChannelSpec("markov", p01=float(rng.uniform(0.02, 0.3)), p10=float(rng.uniform(0.02, 0.3))))
    for _ in range(n_periodic):
        chans.append(
            ChannelSpec(
                "periodic",
                period_min=int(rng.integers(4, 40)),
                duty=float(rng.uniform(0.2, 0.7)),
                jitter_prob=float(rng.uniform(0.0, 0.05)),
            )
        )
    for _ in range(n_lagged):
        order = int(rng.integers(2, 7))
        chans.append(ChannelSpec("lagged", order=order, noise=float(rng.uniform(0.1, 0.3))))
    return BandSpec(chans, T, seed=seed)
