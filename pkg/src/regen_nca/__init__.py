"""Neural cellular automata that grow, walk and regrow voxel soft robots."""

from .grid import CellGrid, GridShapeError, VoxelType

__version__ = "0.1.0"

__all__ = ["CellGrid", "GridShapeError", "VoxelType", "__version__"]
