"""Geometry toolkit for surround-view fisheye voxel perception.

Modules:

* ``grid``: voxel lattice types, coordinate conventions, rigid grid
  transforms
* ``camera``: unified-projection fisheye model with polynomial
  distortion
* ``fov``: fisheye field-of-view voxel masks
* ``occlusion``: all-direction visibility masks by boundary ray casting
* ``completion``: ego-centered 4D panoptic label construction
* ``focus``: center-focus supervision fields
* ``lift``: spherical 2D-to-3D lifting tables
* ``metrics``: panoptic occupancy tracking metrics
* ``io``: binary grid/mask/field/table formats and text inputs
* ``pipeline`` / ``cli``: orchestration
"""

from .grid import FREE, UNKNOWN, GridConfig, PanopticLabel, Pose, VoxelGrid

__all__ = [
    "FREE",
    "UNKNOWN",
    "GridConfig",
    "PanopticLabel",
    "Pose",
    "VoxelGrid",
]

__version__ = "0.1.0"
