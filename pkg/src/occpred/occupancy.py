"""
Power sweeps to binary channel-occupancy grids, plus occupancy statistics.

A cell (bin f, minute t) is occupied when at least one power sample that falls
into bin f during minute t is strictly greater than the threshold.

Grid layout everywhere in this package: ``values[f, t]`` with F frequency bins
on axis 0 and T one-minute intervals on axis 1.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError

MINUTES_PER_HOUR = 60
DEFAULT_MIN_TRANSITIONS = 50
DEFAULT_IMBALANCE_BOUND = 0.01


@dataclass(frozen=True)
class PowerSweep:
    """Raw received-power samples in long form (one entry per sample).

    ``point_index[i]`` indexes ``freq_points`` and ``interval[i]`` is the
    minute the sample belongs to.
    """

    freq_points: np.ndarray
    n_intervals: int
    point_index: np.ndarray
    interval: np.ndarray
    power_dbm: np.ndarray

    def __post_init__(self):
        freq = np.asarray(self.freq_points, dtype=np.float64)
        pidx = np.asarray(self.point_index, dtype=np.int64)
        ivl = np.asarray(self.interval, dtype=np.int64)
        power = np.asarray(self.power_dbm, dtype=np.float64)
        object.__setattr__(self, "freq_points", freq)
        object.__setattr__(self, "point_index", pidx)
        object.__setattr__(self, "interval", ivl)
        object.__setattr__(self, "power_dbm", power)

        if freq.ndim != 1 or freq.size == 0:
            raise InputError("sweep has no frequency points")
        if np.any(np.diff(freq) <= 0):
            raise InputError("freq_points must be strictly increasing")
        if self.n_intervals < 1:
            raise InputError("sweep must cover at least one interval")
        if not (pidx.shape == ivl.shape == power.shape) or pidx.ndim != 1:
            raise InputError("point_index, interval and power_dbm must be equal-length vectors")
        if not np.all(np.isfinite(power)):
            raise InputError("power values must be finite")
        if pidx.size and (pidx.min() < 0 or pidx.max() >= freq.size):
            raise InputError("point_index out of range")
        if ivl.size and (ivl.min() < 0 or ivl.max() >= self.n_intervals):
            raise InputError("interval index out of range")

    @classmethod
    def from_dense(cls, freq_points, power: np.ndarray) -> "PowerSweep":
        """Build from a dense ``(points, intervals, samples)`` power cube."""
        power = np.asarray(power, dtype=np.float64)
        if power.ndim != 3:
            raise InputError("dense power must have shape (points, intervals, samples)")
        P, T, S = power.shape
        pidx, ivl, _ = np.meshgrid(np.arange(P), np.arange(T), np.arange(S), indexing="ij")
        return cls(freq_points, T, pidx.ravel(), ivl.ravel(), power.ravel())

    @property
    def n_samples(self) -> int:
        return int(self.power_dbm.size)


@dataclass(frozen=True)
class OccupancyGrid:
    values: np.ndarray
    bin_width: float = 5e6
    start_time: int = 0

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise InputError(f"occupancy grid must be 2-D (F, T), got shape {v.shape}")
        if v.size and not np.isin(v, (0, 1)).all():
            raise InputError("occupancy values must be exactly 0 or 1")
        if not self.bin_width > 0:
            raise InputError("bin_width must be positive")
        v = np.ascontiguousarray(v, dtype=np.uint8)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "start_time", int(self.start_time))

    @property
    def F(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def minutes(self, start: int, stop: int) -> "OccupancyGrid":
        """Sub-grid over relative minute indices ``[start, stop)``."""
        return OccupancyGrid(self.values[:, start:stop], self.bin_width, self.start_time + start)

    def select_bins(self, bins: Sequence[int]) -> "OccupancyGrid":
        return OccupancyGrid(self.values[np.asarray(bins, dtype=np.int64)], self.bin_width, self.start_time)

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
            and self.bin_width == other.bin_width
            and self.start_time == other.start_time
        )

    __hash__ = None


@dataclass(frozen=True)
class BinDynamics:
    transition_count: np.ndarray
    occupied_fraction: np.ndarray
    airtime: np.ndarray
    dynamic: np.ndarray = field(default=None)

    @property
    def classes(self) -> np.ndarray:
        return np.where(self.dynamic, "dynamic", "static")


def bin_frequencies(freq_points, bin_width: float, n_bins: int | None = None) -> np.ndarray:
    """Map each raw frequency point to a bin index, ``floor((f - f_min) / width)``.

    With ``n_bins`` set, points falling at or beyond bin ``n_bins`` are dropped
    (index -1) and a warning is emitted.
    """
    if isinstance(freq_points, PowerSweep):
        freq_points = freq_points.freq_points
    f = np.asarray(freq_points, dtype=np.float64)
    if f.size == 0:
        raise InputError("cannot bin an empty sweep")
    if not bin_width > 0:
        raise InputError("bin_width must be positive")
    # the small offset absorbs representation error at exact bin edges
    idx = np.floor((f - f.min()) / bin_width + 1e-9).astype(np.int64)
    if n_bins is not None:
        beyond = idx >= n_bins
        if beyond.any():
            warnings.warn(f"{int(beyond.sum())} frequency points lie beyond bin {n_bins - 1} and are dropped")
            idx[beyond] = -1
    return idx


def compute_occupancy(
    sweep: PowerSweep,
    bin_width: float,
    threshold: float,
    n_bins: int | None = None,
    start_time: int = 0,
) -> OccupancyGrid:
    if not math.isfinite(threshold):
        raise InputError("threshold must be finite")
    point_bin = bin_frequencies(sweep.freq_points, bin_width, n_bins)
    F = int(point_bin.max()) + 1 if n_bins is None else n_bins
    T = sweep.n_intervals

    sample_bin = point_bin[sweep.point_index]
    keep = sample_bin >= 0
    cell = sample_bin[keep] * T + sweep.interval[keep]
    peak = np.full(F * T, -np.inf)
    np.maximum.at(peak, cell, sweep.power_dbm[keep])

    seen = np.zeros(F * T, dtype=bool)
    seen[cell] = True
    if not seen.all():
        first = int(np.flatnonzero(~seen)[0])
        raise InputError(f"no samples for bin {first // T}, interval {first % T}")

    values = (peak > threshold).reshape(F, T).astype(np.uint8)
    return OccupancyGrid(values, bin_width, start_time)


def transition_rate(grid: OccupancyGrid) -> np.ndarray:
    """Number of idle/occupied state changes per bin."""
    if grid.T < 2:
        raise InputError("transition rate needs at least two intervals")
    v = grid.values
    return np.count_nonzero(v[:, 1:] != v[:, :-1], axis=1)


def hourly_occupied_counts(grid: OccupancyGrid) -> tuple[np.ndarray, np.ndarray]:
    """Occupied-minute counts per (bin, hour block) and the length of each block."""
    T = grid.T
    starts = np.arange(0, T, MINUTES_PER_HOUR)
    lengths = np.minimum(starts + MINUTES_PER_HOUR, T) - starts
    if T == 0:
        return np.zeros((grid.F, 0), dtype=np.int64), lengths
    counts = np.add.reduceat(grid.values.astype(np.int64), starts, axis=1)
    return counts, lengths


def airtime_utilization(grid: OccupancyGrid) -> np.ndarray:
    """Hourly occupied percentage per bin; the trailing partial hour uses its own length."""
    counts, lengths = hourly_occupied_counts(grid)
    return 100.0 * counts / lengths


def occupied_fraction(grid: OccupancyGrid) -> np.ndarray:
    if grid.T == 0:
        raise InputError("empty grid")
    return grid.values.mean(axis=1)


def classify_dynamics(
    dyn: BinDynamics,
    min_transitions: int = DEFAULT_MIN_TRANSITIONS,
    imbalance_bound: float = DEFAULT_IMBALANCE_BOUND,
) -> np.ndarray:
    """Boolean mask, True where a bin counts as dynamic."""
    if min_transitions < 0 or not 0 <= imbalance_bound < 0.5:
        raise InputError("min_transitions must be >= 0 and imbalance_bound in [0, 0.5)")
    frac = np.asarray(dyn.occupied_fraction, dtype=np.float64)
    minority = np.minimum(frac, 1.0 - frac)
    return (np.asarray(dyn.transition_count) >= min_transitions) & (minority >= imbalance_bound)


def bin_dynamics(
    grid: OccupancyGrid,
    min_transitions: int = DEFAULT_MIN_TRANSITIONS,
    imbalance_bound: float = DEFAULT_IMBALANCE_BOUND,
) -> BinDynamics:
    dyn = BinDynamics(
        transition_count=transition_rate(grid),
        occupied_fraction=occupied_fraction(grid),
        airtime=airtime_utilization(grid),
    )
    mask = classify_dynamics(dyn, min_transitions, imbalance_bound)
    return BinDynamics(dyn.transition_count, dyn.occupied_fraction, dyn.airtime, mask)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

HEX_MAGIC = "#occgrid"


def write_grid_csv(grid: OccupancyGrid, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["minute"] + [f"bin_{f}" for f in range(grid.F)])
        for t in range(grid.T):
            w.writerow([grid.start_time + t, *grid.values[:, t].tolist()])


def read_grid_csv(path, bin_width: float = 5e6) -> OccupancyGrid:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "minute" or header[1:] != [f"bin_{f}" for f in range(len(header) - 1)]:
            raise InputError(f"{path}: expected header 'minute,bin_0,...,bin_{{F-1}}'")
        body = np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)
    if body.size == 0:
        raise InputError(f"{path}: grid has no rows")
    minutes = body[:, 0]
    if np.any(np.diff(minutes) != 1):
        raise InputError(f"{path}: minute column must be contiguous and increasing")
    return OccupancyGrid(body[:, 1:].T, bin_width, int(minutes[0]))


def write_grid_hex(grid: OccupancyGrid, path) -> None:
    """Compact form: one packed hex string per minute, bin 0 in the most significant bit."""
    path = Path(path)
    packed = np.packbits(grid.values, axis=0, bitorder="big")  # (ceil(F/8), T)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{HEX_MAGIC} F={grid.F} bin_width_hz={grid.bin_width!r} start={grid.start_time}\n")
        for t in range(grid.T):
            fh.write(f"{grid.start_time + t} {packed[:, t].tobytes().hex()}\n")


def read_grid_hex(path) -> OccupancyGrid:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().split()
        if not header or header[0] != HEX_MAGIC:
            raise InputError(f"{path}: missing '{HEX_MAGIC}' header")
        meta = dict(item.split("=", 1) for item in header[1:])
        F, bin_width, start = int(meta["F"]), float(meta["bin_width_hz"]), int(meta["start"])
        columns = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            minute, hexstr = line.split()
            if int(minute) != start + len(columns):
                raise InputError(f"{path}:{lineno}: non-contiguous minute {minute}")
            columns.append(np.frombuffer(bytes.fromhex(hexstr), dtype=np.uint8))
    if not columns:
        raise InputError(f"{path}: grid has no rows")
    packed = np.stack(columns, axis=1)
    values = np.unpackbits(packed, axis=0, count=F, bitorder="big")
    return OccupancyGrid(values, bin_width, start)


def read_grid(path, bin_width: float = 5e6) -> OccupancyGrid:
    """Read either grid format, sniffing the first line."""
    with Path(path).open(encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith(HEX_MAGIC):
        return read_grid_hex(path)
    return read_grid_csv(path, bin_width)


def write_sweep_csv(sweep: PowerSweep, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_hz", "interval_index", "power_dbm"])
        freqs = sweep.freq_points[sweep.point_index]
        for f, t, p in zip(freqs.tolist(), sweep.interval.tolist(), sweep.power_dbm.tolist()):
            w.writerow([repr(f), t, repr(p)])


def read_sweep_csv(path) -> PowerSweep:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        header = [c.strip() for c in fh.readline().split(",")]
        if header != ["freq_hz", "interval_index", "power_dbm"]:
            raise InputError(f"{path}: expected header 'freq_hz,interval_index,power_dbm'")
        body = np.loadtxt(fh, delimiter=",", dtype=np.float64, ndmin=2)
    if body.size == 0:
        raise InputError(f"{path}: sweep is empty")
    freq_points, point_index = np.unique(body[:, 0], return_inverse=True)
    interval = body[:, 1].astype(np.int64)
    if np.any(interval != body[:, 1]) or interval.min() < 0:
        raise InputError(f"{path}: interval_index must be a non-negative integer")
    return PowerSweep(freq_points, int(interval.max()) + 1, point_index, interval, body[:, 2])
