"""Dataset ingestion: binary scans, pose files, calibration, PLY export."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .geom import Pose

KITTI_RECORD_BYTES = 16  # four little-endian float32: x, y, z, reflectance


class FormatError(ValueError):
    """Raised when a scan or pose file does not match its declared format."""


@dataclass
class PointCloud:
    """Points in the sensor frame (meters) with optional reflectance values."""

    points: np.ndarray
    intensities: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.intensities is not None:
            self.intensities = np.asarray(self.intensities, dtype=float).reshape(-1)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class Trajectory:
    """Sequence of absolute poses indexed by frame id."""

    poses: list[Pose]
    frame_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.frame_ids is None:
            self.frame_ids = np.arange(len(self.poses))
        self.frame_ids = np.asarray(self.frame_ids, dtype=int)
        if len(self.frame_ids) != len(self.poses):
            raise ValueError("frame_ids and poses length mismatch")
        if len(self.frame_ids) > 1 and not (np.diff(self.frame_ids) > 0).all():
            raise ValueError("frame ids must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i: int) -> Pose:
        return self.poses[i]

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def relative(self, i: int, j: int) -> Pose:
        """Pose of frame j expressed in frame i."""
        return self.poses[i].inverse().compose(self.poses[j])


@dataclass
class Calibration:
    """Rigid transform from the sensor frame to the ground-truth reference frame."""

    sensor_to_reference: Pose

    @staticmethod
    def identity() -> "Calibration":
        return Calibration(Pose.identity())


def read_scan(path: str, fmt: str = "kitti-bin") -> PointCloud:
    """Load one scan; non-finite records are dropped.

    kitti-bin is the packed float32 x,y,z,reflectance record stream; ply-ascii
    accepts any ASCII PLY whose vertex element carries float x,y,z properties.
    """
    if fmt == "kitti-bin":
        return _read_kitti_bin(path)
    if fmt == "ply-ascii":
        return _read_ply_ascii(path)
    raise ValueError(f"unknown scan format {fmt!r}")


def _read_kitti_bin(path: str) -> PointCloud:
    size = os.path.getsize(path)
    if size == 0:
        raise FormatError(f"{path}: no points")
    if size % KITTI_RECORD_BYTES != 0:
        offset = size - size % KITTI_RECORD_BYTES
        raise FormatError(f"{path}: truncated record at byte offset {offset}")
    raw = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    finite = np.isfinite(raw).all(axis=1)
    raw = raw[finite]
    if raw.shape[0] == 0:
        raise FormatError(f"{path}: no points")
    return PointCloud(raw[:, :3].astype(float), raw[:, 3].astype(float))


def _read_ply_ascii(path: str) -> PointCloud:
    with open(path, "r") as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError(f"{path}: missing 'ply' magic on line 1")
    n_vertex = None
    properties: list[str] = []
    body_start = None
    in_vertex_element = False
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise FormatError(f"{path}: line {i}: only ascii PLY is supported")
        elif tok[0] == "element":
            in_vertex_element = tok[1] == "vertex"
            if in_vertex_element:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex_element:
            properties.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = i
            break
    if body_start is None or n_vertex is None:
        raise FormatError(f"{path}: incomplete PLY header")
    for axis in ("x", "y", "z"):
        if axis not in properties:
            raise FormatError(f"{path}: vertex element lacks property {axis!r}")
    cols = {name: k for k, name in enumerate(properties)}
    body = lines[body_start:body_start + n_vertex]
    if len(body) < n_vertex:
        raise FormatError(f"{path}: expected {n_vertex} vertices, file ends early")
    try:
        data = np.array([[float(v) for v in line.split()] for line in body])
    except ValueError as e:
        raise FormatError(f"{path}: malformed vertex line: {e}") from e
    if data.shape[1] != len(properties):
        raise FormatError(f"{path}: vertex line width does not match header")
    points = data[:, [cols["x"], cols["y"], cols["z"]]]
    intensities = data[:, cols["intensity"]] if "intensity" in cols else None
    finite = np.isfinite(points).all(axis=1)
    points = points[finite]
    if intensities is not None:
        intensities = intensities[finite]
    if points.shape[0] == 0:
        raise FormatError(f"{path}: no points")
    return PointCloud(points, intensities)


def write_ply(points: np.ndarray, path: str) -> None:
    """Write an (N, 3) point array as ASCII PLY (for map inspection)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {points.shape[0]}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("end_header\n")
        for x, y, z in points:
            f.write(f"{x:.6f} {y:.6f} {z:.6f}\n")


def _parse_pose_line(tok: list[str], path: str, lineno: int) -> Pose:
    if len(tok) != 12:
        raise FormatError(f"{path}: line {lineno}: expected 12 values, got {len(tok)}")
    try:
        vals = np.array([float(v) for v in tok]).reshape(3, 4)
    except ValueError as e:
        raise FormatError(f"{path}: line {lineno}: {e}") from e
    return Pose(vals[:, :3], vals[:, 3])


def _read_pose_file(path: str) -> list[Pose]:
    poses = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            tok = line.split()
            if not tok:
                continue
            poses.append(_parse_pose_line(tok, path, lineno))
    return poses


def read_ground_truth(path: str, calib: Calibration | None = None) -> Trajectory:
    """Load reference poses and express them in the sensor frame.

    Each pose P given in the reference frame becomes C^-1 P C with
    C = sensor_to_reference, and the trajectory is re-anchored so that
    the first pose is the identity.
    """
    calib = calib or Calibration.identity()
    c = calib.sensor_to_reference
    c_inv = c.inverse()
    poses = [c_inv.compose(p).compose(c) for p in _read_pose_file(path)]
    if poses:
        anchor = poses[0].inverse()
        poses = [anchor.compose(p) for p in poses]
    return Trajectory(poses)


def read_external_poses(path: str) -> Trajectory:
    """Load a precomputed per-frame trajectory (external initializer input)."""
    return Trajectory(_read_pose_file(path))


def write_trajectory(traj: Trajectory, path: str) -> None:
    """Write poses as 12 row-major values per line, 9 significant digits."""
    with open(path, "w") as f:
        for pose in traj.poses:
            m = np.hstack([pose.rotation, pose.translation[:, None]])
            f.write(" ".join(f"{v:.9g}" for v in m.ravel()) + "\n")


def read_calibration(path: str) -> Calibration:
    """Read a sensor-to-reference transform.

    Accepts either a bare 12-value line or a KITTI-style calib file whose
    'Tr:' entry holds the transform.
    """
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            tok = line.split()
            if not tok:
                continue
            if tok[0].rstrip(":").lower() == "tr":
                return Calibration(_parse_pose_line(tok[1:], path, lineno))
            if len(tok) == 12 and ":" not in tok[0]:
                return Calibration(_parse_pose_line(tok, path, lineno))
    raise FormatError(f"{path}: no calibration transform found")
