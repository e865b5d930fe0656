"""File formats.

Binary formats are little-endian with a 4-byte magic:

* ``OTG1`` voxel grids: dims (3 x u32), voxel_size (3 x f64),
  extent_min (3 x f64), then a (semantic u16, instance u32) record per
  voxel in x-fastest linear order.
* ``OTM1`` boolean masks: same header, payload packed 1 bit per voxel,
  little-endian bit order, x-fastest.
* ``OTF1`` scalar fields: same header, one f32 per voxel, x-fastest.
* ``OTL1`` frustum tables: rows/cols/bins (3 x u32), bin depths
  (f64 each), then per entry 3 x f32 xyz plus a u8 validity flag, bins
  fastest.

Text formats: pose files carry one frame per line as 12 floats
(row-major 3x4 [R|t]); calibration and config files are flat
whitespace-separated key/value lines with ``#`` comments; box files
carry ``frame instance semantic <12 pose floats> <3 half extents>``
per line.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .camera import FisheyeCamera, FisheyeIntrinsics
from .completion import InstanceBox
from .grid import GridConfig, Pose, VoxelGrid

PathLike = Union[str, Path]

MAGIC_GRID = b"OTG1"
MAGIC_MASK = b"OTM1"
MAGIC_FIELD = b"OTF1"
MAGIC_TABLE = b"OTL1"

_HEADER = struct.Struct("<3I6d")
_VOXEL_DTYPE = np.dtype([("semantic", "<u2"), ("instance", "<u4")])
_TABLE_DTYPE = np.dtype([("xyz", "<f4", (3,)), ("valid", "u1")])

CALIBRATION_KEYS = (
    "xi",
    "gamma1",
    "gamma2",
    "u0",
    "v0",
    "k1",
    "k2",
    "p1",
    "p2",
    "width",
    "height",
)


class FormatError(ValueError):
    """Malformed or truncated file content."""


def _write_header(fh, magic: bytes, config: GridConfig) -> None:
    fh.write(magic)
    fh.write(_HEADER.pack(*config.dims, *config.voxel_size, *config.extent_min))


def _read_header(fh, magic: bytes, path: PathLike) -> GridConfig:
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    vals = _HEADER.unpack(raw)
    dims = vals[:3]
    size = vals[3:6]
    emin = vals[6:9]
    emax = tuple(lo + n * s for lo, n, s in zip(emin, dims, size))
    return GridConfig(emin, emax, size)


def write_grid(path: PathLike, grid: VoxelGrid) -> None:
    records = np.empty(grid.config.n_voxels, dtype=_VOXEL_DTYPE)
    records["semantic"] = grid.semantics.ravel(order="F")
    records["instance"] = grid.instances.ravel(order="F")
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_GRID, grid.config)
        fh.write(records.tobytes())


def read_grid(path: PathLike) -> VoxelGrid:
    with open(path, "rb") as fh:
        config = _read_header(fh, MAGIC_GRID, path)
        payload = fh.read()
    expected = config.n_voxels * _VOXEL_DTYPE.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload size {len(payload)} != {expected}")
    records = np.frombuffer(payload, dtype=_VOXEL_DTYPE)
    sem = records["semantic"].reshape(config.dims, order="F")
    inst = records["instance"].reshape(config.dims, order="F")
    return VoxelGrid(config, sem, inst)


def write_mask(path: PathLike, config: GridConfig, mask: np.ndarray) -> None:
    flat = np.ascontiguousarray(mask, dtype=bool).ravel(order="F")
    packed = np.packbits(flat, bitorder="little")
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_MASK, config)
        fh.write(packed.tobytes())


def read_mask(path: PathLike) -> Tuple[GridConfig, np.ndarray]:
    with open(path, "rb") as fh:
        config = _read_header(fh, MAGIC_MASK, path)
        payload = fh.read()
    n = config.n_voxels
    expected = (n + 7) // 8
    if len(payload) != expected:
        raise FormatError(f"{path}: payload size {len(payload)} != {expected}")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    return config, bits[:n].astype(bool).reshape(config.dims, order="F")


def write_field(path: PathLike, config: GridConfig, values: np.ndarray) -> None:
    flat = np.ascontiguousarray(values, dtype="<f4").ravel(order="F")
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_FIELD, config)
        fh.write(flat.tobytes())


def read_field(path: PathLike) -> Tuple[GridConfig, np.ndarray]:
    with open(path, "rb") as fh:
        config = _read_header(fh, MAGIC_FIELD, path)
        payload = fh.read()
    expected = config.n_voxels * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: payload size {len(payload)} != {expected}")
    vals = np.frombuffer(payload, dtype="<f4")
    return config, vals.reshape(config.dims, order="F").astype(np.float32)


def write_frustum_table(
    path: PathLike, points: np.ndarray, valid: np.ndarray, depths: Sequence[float]
) -> None:
    rows, cols, bins = points.shape[:3]
    records = np.empty(rows * cols * bins, dtype=_TABLE_DTYPE)
    records["xyz"] = points.reshape(-1, 3).astype("<f4")
    records["valid"] = np.repeat(valid.reshape(-1).astype("u1"), bins)
    with open(path, "wb") as fh:
        fh.write(MAGIC_TABLE)
        fh.write(struct.pack("<3I", rows, cols, bins))
        fh.write(struct.pack(f"<{bins}d", *depths))
        fh.write(records.tobytes())


def read_frustum_table(path: PathLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (points (r, c, b, 3) f32, valid (r, c) bool, depths (b,))."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC_TABLE:
            raise FormatError(f"{path}: bad magic {magic!r}")
        rows, cols, bins = struct.unpack("<3I", fh.read(12))
        depths = np.array(struct.unpack(f"<{bins}d", fh.read(8 * bins)))
        payload = fh.read()
    expected = rows * cols * bins * _TABLE_DTYPE.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload size {len(payload)} != {expected}")
    records = np.frombuffer(payload, dtype=_TABLE_DTYPE)
    points = records["xyz"].reshape(rows, cols, bins, 3)
    valid = records["valid"].reshape(rows, cols, bins)[:, :, 0].astype(bool)
    return points, valid, depths


def read_poses(path: PathLike) -> List[Pose]:
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 12:
            raise FormatError(f"{path}:{lineno}: expected 12 floats, got {len(parts)}")
        vals = np.array([float(p) for p in parts]).reshape(3, 4)
        poses.append(Pose.from_matrix(vals))
    return poses


def write_poses(path: PathLike, poses: Sequence[Pose]) -> None:
    lines = [" ".join(f"{v:.17g}" for v in p.matrix().ravel()) for p in poses]
    Path(path).write_text("\n".join(lines) + "\n")


def read_keyvalues(path: PathLike) -> Dict[str, List[str]]:
    """Flat key/value lines; repeated keys accumulate in order."""
    out: Dict[str, List[str]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise FormatError(f"{path}:{lineno}: expected 'key value...'")
        out.setdefault(parts[0], []).append(" ".join(parts[1:]))
    return out


def read_calibration(path: PathLike) -> FisheyeCamera:
    kv = read_keyvalues(path)
    missing = [k for k in CALIBRATION_KEYS if k not in kv]
    if missing:
        raise FormatError(f"{path}: missing calibration keys: {', '.join(missing)}")
    vals = {k: float(kv[k][-1]) for k in CALIBRATION_KEYS}
    intr = FisheyeIntrinsics(
        xi=vals["xi"],
        gamma1=vals["gamma1"],
        gamma2=vals["gamma2"],
        u0=vals["u0"],
        v0=vals["v0"],
        width=int(vals["width"]),
        height=int(vals["height"]),
        k1=vals["k1"],
        k2=vals["k2"],
        p1=vals["p1"],
        p2=vals["p2"],
    )
    if "extrinsic" not in kv:
        raise FormatError(f"{path}: missing calibration keys: extrinsic")
    parts = kv["extrinsic"][-1].split()
    if len(parts) != 12:
        raise FormatError(f"{path}: extrinsic needs 12 floats, got {len(parts)}")
    pose = Pose.from_matrix(np.array([float(p) for p in parts]).reshape(3, 4))
    return FisheyeCamera(intr, pose)


def write_calibration(path: PathLike, camera: FisheyeCamera) -> None:
    intr = camera.intrinsics
    lines = [f"{k} {getattr(intr, k):.17g}" for k in CALIBRATION_KEYS]
    ext = " ".join(f"{v:.17g}" for v in camera.cam_to_ego.matrix().ravel())
    lines.append(f"extrinsic {ext}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_boxes(path: PathLike) -> List[InstanceBox]:
    """Parse per-frame box lines into per-instance tracks."""
    raw: Dict[int, Dict] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 18:
            raise FormatError(f"{path}:{lineno}: expected 18 fields, got {len(parts)}")
        frame = int(parts[0])
        inst_id = int(parts[1])
        sem_id = int(parts[2])
        pose = Pose.from_matrix(np.array([float(p) for p in parts[3:15]]).reshape(3, 4))
        half = np.array([float(p) for p in parts[15:18]])
        entry = raw.setdefault(
            inst_id, {"semantic": sem_id, "half": half, "poses": {}}
        )
        if entry["semantic"] != sem_id:
            raise FormatError(
                f"{path}:{lineno}: instance {inst_id} changes semantic class"
            )
        entry["poses"][frame] = pose
    return [
        InstanceBox(
            instance_id=iid,
            semantic_id=entry["semantic"],
            half_extents=entry["half"],
            poses_world=entry["poses"],
        )
        for iid, entry in sorted(raw.items())
    ]


def write_boxes(path: PathLike, boxes: Sequence[InstanceBox]) -> None:
    lines = []
    for box in sorted(boxes, key=lambda b: b.instance_id):
        for frame in sorted(box.poses_world):
            pose = box.poses_world[frame]
            vals = " ".join(f"{v:.17g}" for v in pose.matrix().ravel())
            half = " ".join(f"{v:.17g}" for v in box.half_extents)
            lines.append(f"{frame} {box.instance_id} {box.semantic_id} {vals} {half}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid_config(path: PathLike) -> GridConfig:
    kv = read_keyvalues(path)
    vecs = {}
    for key in ("extent_min", "extent_max", "voxel_size"):
        if key not in kv:
            raise FormatError(f"{path}: missing grid key {key}")
        parts = kv[key][-1].split()
        if len(parts) != 3:
            raise FormatError(f"{path}: {key} needs 3 floats")
        vecs[key] = tuple(float(p) for p in parts)
    return GridConfig(vecs["extent_min"], vecs["extent_max"], vecs["voxel_size"])
