"""Synthetic 3-frame sequence used by completion, pipeline, and
acceptance tests.

World model (all units meters, 1 m voxels, grid x in [-8, 8], y in
[-8, 8], z in [0, 4], ego-centered):

* the ego advances +1 m in world x per frame (frames 0, 1, 2);
* a ground strip (semantic 3) runs along world x centers 0.5 .. 10.5 at
  y in {-0.5, 0.5}, z = 0.5;
* a static wall (semantic 2) stands at world x = 5.5, y in
  {-1.5 .. 1.5}, z in {0.5, 1.5};
* a 2x2x2 cube instance (semantic 1, instance 1) floats centered at
  world (1, -2 + k, 2) in frame k (clear of the ground strip): it moves +1 m in y per frame while the ego
  drives past it, so by frame 2 it sits fully behind the ego.

Forward-facing grids carry only voxels with ego x > 0. The expected
frame-2 centered grid is derived by hand in EXPECTED_F2 comments.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from omnivox.completion import FrameLabels, InstanceBox
from omnivox.grid import GridConfig, Pose, VoxelGrid
from omnivox import io as ovio

GRID = GridConfig((-8.0, -8.0, 0.0), (8.0, 8.0, 4.0), (1.0, 1.0, 1.0))

GROUND_SEM = 3
WALL_SEM = 2
CUBE_SEM = 1
CUBE_ID = 1

N_FRAMES = 3


def ego_pose(k: int) -> Pose:
    return Pose(np.eye(3), (float(k), 0.0, 0.0))


def cube_pose(k: int) -> Pose:
    return Pose(np.eye(3), (1.0, -2.0 + k, 2.0))


def cube_box() -> InstanceBox:
    return InstanceBox(
        instance_id=CUBE_ID,
        semantic_id=CUBE_SEM,
        half_extents=np.array([1.0, 1.0, 1.0]),
        poses_world={k: cube_pose(k) for k in range(N_FRAMES)},
    )


def world_content(k: int) -> Dict[Tuple[float, float, float], Tuple[int, int]]:
    """World voxel centers -> (semantic, instance) at frame k."""
    content: Dict[Tuple[float, float, float], Tuple[int, int]] = {}
    for wx in np.arange(0.5, 11.0, 1.0):
        for wy in (-0.5, 0.5):
            content[(float(wx), wy, 0.5)] = (GROUND_SEM, 0)
    for wy in (-1.5, -0.5, 0.5, 1.5):
        for wz in (0.5, 1.5):
            content[(5.5, wy, wz)] = (WALL_SEM, 0)
    cy = -2.0 + k
    for dx in (-0.5, 0.5):
        for dy in (-0.5, 0.5):
            for dz in (-0.5, 0.5):
                content[(1.0 + dx, cy + dy, 2.0 + dz)] = (CUBE_SEM, CUBE_ID)
    return content


def forward_grid(k: int, with_instances: bool = True) -> VoxelGrid:
    """Forward-facing labels of frame k (ego x > 0 only)."""
    sem = np.zeros(GRID.dims, dtype=np.uint16)
    inst = np.zeros(GRID.dims, dtype=np.uint32)
    for (wx, wy, wz), (s, i) in world_content(k).items():
        ex, ey, ez = wx - k, wy, wz
        if ex <= 0:
            continue
        if not GRID.contains((ex, ey, ez)):
            continue
        ix = int(np.floor((ex - GRID.extent_min[0])))
        iy = int(np.floor((ey - GRID.extent_min[1])))
        iz = int(np.floor((ez - GRID.extent_min[2])))
        sem[ix, iy, iz] = s
        inst[ix, iy, iz] = i if with_instances else 0
    return VoxelGrid(GRID, sem, inst)


def frame_labels(k: int) -> FrameLabels:
    return FrameLabels(k, ego_pose(k), forward_grid(k))


def expected_frame2_centered() -> VoxelGrid:
    """Hand-derived frame-2 centered grid.

    Fill ranges chain through the sequence: frame 1 may paste one voxel
    row behind the ego (frame 0 content shifted back by one), giving its
    centered grid a rear reach of 0.5 m; frame 2's fill range therefore
    extends 1.5 m back.

    * ground: observed columns reach world x 0.5 via frame 0; in frame-2
      ego coordinates that spans x -1.5 .. 7.5 (the fill range bound and
      the forward extent coincide at those limits);
    * wall: world 5.5 -> ego 3.5, present in every frame;
    * cube: by frame 2 the cube (now centered at world (1, 0, 2)) sits at
      ego x {-1.5, -0.5}; frame 1 contributes its observed half, frame 0
      the rest, both transported by the cube's own +y motion.
    """
    sem = np.zeros(GRID.dims, dtype=np.uint16)
    inst = np.zeros(GRID.dims, dtype=np.uint32)

    def put(ex, ey, ez, s, i=0):
        ix = int(ex - GRID.extent_min[0])
        iy = int(ey - GRID.extent_min[1])
        iz = int(ez - GRID.extent_min[2])
        sem[ix, iy, iz] = s
        inst[ix, iy, iz] = i

    for ex in np.arange(-1.5, 8.0, 1.0):
        for ey in (-0.5, 0.5):
            put(ex, ey, 0.5, GROUND_SEM)
    for ey in (-1.5, -0.5, 0.5, 1.5):
        for ez in (0.5, 1.5):
            put(3.5, ey, ez, WALL_SEM)
    for ex in (-1.5, -0.5):
        for ey in (-0.5, 0.5):
            for ez in (1.5, 2.5):
                put(ex, ey, ez, CUBE_SEM, CUBE_ID)
    return VoxelGrid(GRID, sem, inst)


def write_sequence_dir(root: Path) -> Path:
    """Materialize the fixture as a pipeline sequence directory."""
    root = Path(root)
    (root / "grids").mkdir(parents=True, exist_ok=True)
    ovio.write_poses(root / "poses.txt", [ego_pose(k) for k in range(N_FRAMES)])
    ovio.write_boxes(root / "boxes.txt", [cube_box()])
    for k in range(N_FRAMES):
        ovio.write_grid(root / "grids" / f"{k:06d}.otg", forward_grid(k, with_instances=False))
    return root


def write_calibrations(calib_dir: Path) -> List[Path]:
    """Two opposed xi=2 fisheyes mounted at the ego origin."""
    from omnivox.camera import FisheyeCamera, FisheyeIntrinsics

    calib_dir = Path(calib_dir)
    calib_dir.mkdir(parents=True, exist_ok=True)
    intr = FisheyeIntrinsics(
        xi=2.0, gamma1=400.0, gamma2=400.0, u0=352.0, v0=352.0, width=704, height=704
    )
    fwd = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    bwd = np.array([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    paths = []
    for name, rot in (("front", fwd), ("rear", bwd)):
        path = calib_dir / f"{name}.txt"
        ovio.write_calibration(path, FisheyeCamera(intr, Pose(rot, np.zeros(3))))
        paths.append(path)
    return paths


def write_pipeline_config(root: Path) -> Path:
    """Pipeline config next to a calib/ directory under ``root``."""
    root = Path(root)
    calibs = write_calibrations(root / "calib")
    config = root / "pipeline.txt"
    lines = [
        "extent_min -8 -8 0",
        "extent_max 8 8 4",
        "voxel_size 1 1 1",
        "history_depth 2",
        "epsilon 1e-6",
        "stride 16",
        f"stuff_classes {GROUND_SEM} {WALL_SEM}",
        f"thing_classes {CUBE_SEM}",
        "occlusion_origins ego",
        "frame_rate_hz 2",
    ]
    lines += [f"camera {p.relative_to(root)}" for p in calibs]
    config.write_text("\n".join(lines) + "\n")
    return config
