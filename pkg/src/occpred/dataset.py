"""Sliding-window supervised datasets and the chronological train/test split."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .occupancy import OccupancyGrid

DEFAULT_TRAIN_FRACTION = 0.75


@dataclass(frozen=True)
class WindowedDataset:
    """Examples built from a grid with a history of K minutes.

    ``sequences[n, k, f]`` is the occupancy of bin f at minute
    ``origin_minutes[n] - K + k``; ``features`` is the same buffer flattened
    time-major, so feature ``k * F + f`` refers to that same bit.
    """

    K: int
    sequences: np.ndarray
    targets: np.ndarray
    origin_minutes: np.ndarray

    @property
    def N(self) -> int:
        return self.sequences.shape[0]

    @property
    def F(self) -> int:
        return self.sequences.shape[2]

    @property
    def features(self) -> np.ndarray:
        return self.sequences.reshape(self.N, self.K * self.F)

    @property
    def previous_state(self) -> np.ndarray:
        """Occupancy one minute before each target, shape (N, F)."""
        return self.sequences[:, -1, :]

    def subset(self, rows) -> "WindowedDataset":
        rows = np.asarray(rows)
        return WindowedDataset(
            self.K,
            np.ascontiguousarray(self.sequences[rows]),
            np.ascontiguousarray(self.targets[rows]),
            self.origin_minutes[rows],
        )


def build_windows(grid: OccupancyGrid, K: int) -> WindowedDataset:
    if K < 1:
        raise InputError(f"history length K must be >= 1, got {K}")
    if grid.T <= K:
        raise InputError(f"grid has {grid.T} minutes; need more than K={K}")
    by_minute = grid.values.T  # (T, F)
    windows = np.lib.stride_tricks.sliding_window_view(by_minute, K, axis=0)[:-1]  # (N, F, K)
    sequences = np.ascontiguousarray(windows.transpose(0, 2, 1))
    targets = np.ascontiguousarray(by_minute[K:])
    origins = grid.start_time + np.arange(K, grid.T, dtype=np.int64)
    return WindowedDataset(K, sequences, targets, origins)


def chronological_split(
    grid: OccupancyGrid, train_fraction: float = DEFAULT_TRAIN_FRACTION, K: int = 1
) -> tuple[OccupancyGrid, OccupancyGrid]:
    """First ``floor(train_fraction * T)`` minutes train, the rest test.

    Windows are built separately on each side, so none straddles the boundary.
    """
    if not 0.0 < train_fraction < 1.0:
        raise InputError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    cut = int(np.floor(train_fraction * grid.T))
    if cut <= K or grid.T - cut <= K:
        raise InputError(
            f"split at minute {cut} of {grid.T} leaves a side with <= K={K} minutes"
        )
    return grid.minutes(0, cut), grid.minutes(cut, grid.T)


def write_dataset_csv(ds: WindowedDataset, path) -> None:
    KF = ds.K * ds.F
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin_minute"] + [f"x_{i}" for i in range(KF)] + [f"y_{i}" for i in range(ds.F)])
        X, Y = ds.features, ds.targets
        for n in range(ds.N):
            w.writerow([int(ds.origin_minutes[n]), *X[n].tolist(), *Y[n].tolist()])


def read_dataset_csv(path, K: int) -> WindowedDataset:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        body = np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)
    n_x = sum(1 for h in header if h.startswith("x_"))
    F = sum(1 for h in header if h.startswith("y_"))
    if n_x != K * F:
        raise InputError(f"{path}: {n_x} feature columns do not match K={K} x F={F}")
    seq = body[:, 1 : 1 + n_x].astype(np.uint8).reshape(-1, K, F)
    return WindowedDataset(K, seq, body[:, 1 + n_x :].astype(np.uint8), body[:, 0])
