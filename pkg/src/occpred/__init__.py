"""Next-minute spectrum occupancy prediction from binary time-frequency grids."""

__version__ = "0.1.0"

from .errors import InputError, StageError, TrainingError  # noqa: E402
from .occupancy import OccupancyGrid, PowerSweep, compute_occupancy  # noqa: E402

__all__ = ["InputError", "StageError", "TrainingError", "OccupancyGrid", "PowerSweep", "compute_occupancy"]
