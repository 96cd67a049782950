"""Depth-guided voxel radiance fields for indoor 360-degree capture."""

__version__ = "0.1.0"
