"""Store-navigation mapping: occupancy grids, walkable-space topology,
zone inference, pose fingerprinting, routing, and product search."""

__version__ = "0.1.0"

from .errors import MapError
from .geometry import CellState, GridPoint, OccupancyGrid, Pose2D, WorldPoint

__all__ = [
    "CellState",
    "GridPoint",
    "MapError",
    "OccupancyGrid",
    "Pose2D",
    "WorldPoint",
    "__version__",
]
