"""Voxelized laboratory for delta-tube arrangements in R^2..R^4."""
__version__ = "0.1.0"
