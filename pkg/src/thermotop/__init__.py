"""Thermo-elastic topology optimization on voxel grids via topological-sensitivity level sets."""

__version__ = "0.1.0"
