"""Synthetic spinning-LiDAR simulator over planar scenes, for oracle tests."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .cloud_io import PointCloud, Trajectory, write_trajectory
from .geom import Pose, rot_z

RAY_T_MIN = 1e-6


class SceneSpecError(ValueError):
    """Raised for unusable scene configuration files."""


@dataclass(frozen=True)
class Rect:
    """Finite rectangle spanned by two orthogonal edge vectors."""

    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))
        if np.linalg.norm(np.cross(self.u, self.v)) <= 0:
            raise ValueError("rectangle has zero area")
        if abs(np.dot(self.u, self.v)) > 1e-9 * np.linalg.norm(self.u) * np.linalg.norm(self.v):
            raise ValueError("rectangle edges must be orthogonal")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its min and max corners."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float).reshape(3))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float).reshape(3))
        if not (self.hi > self.lo).all():
            raise ValueError("box must have positive volume")

    def faces(self) -> list[Rect]:
        lo, hi = self.lo, self.hi
        d = hi - lo
        ex = np.array([d[0], 0, 0])
        ey = np.array([0, d[1], 0])
        ez = np.array([0, 0, d[2]])
        return [
            Rect(lo, ex, ey),                          # bottom
            Rect([lo[0], lo[1], hi[2]], ex, ey),       # top
            Rect(lo, ex, ez),                          # y = lo
            Rect([lo[0], hi[1], lo[2]], ex, ez),       # y = hi
            Rect(lo, ey, ez),                          # x = lo
            Rect([hi[0], lo[1], lo[2]], ey, ez),       # x = hi
        ]


@dataclass
class Scene:
    primitives: list[object] = field(default_factory=list)

    def __post_init__(self):
        self._compiled = None

    def add(self, primitive) -> None:
        self.primitives.append(primitive)
        self._compiled = None

    def rectangles(self) -> list[Rect]:
        rects = []
        for p in self.primitives:
            if isinstance(p, Box):
                rects.extend(p.faces())
            else:
                rects.append(p)
        return rects

    def compiled(self):
        """Per-rectangle arrays used by the ray intersector (cached)."""
        if self._compiled is None:
            rects = self.rectangles()
            if not rects:
                raise SceneSpecError("scene has no primitives")
            origin = np.array([r.origin for r in rects])
            u = np.array([r.u for r in rects])
            v = np.array([r.v for r in rects])
            normal = np.cross(u, v)
            normal /= np.linalg.norm(normal, axis=1, keepdims=True)
            self._compiled = {
                "origin": origin, "u": u, "v": v, "normal": normal,
                "plane_d": (normal * origin).sum(axis=1),
                "uu": (u * u).sum(axis=1), "vv": (v * v).sum(axis=1),
            }
        return self._compiled


@dataclass(frozen=True)
class LidarModel:
    """Spinning scanner: one ray per (channel, azimuth step) at pixel centers."""

    channels: int = 64
    horizontal_steps: int = 720
    elevation_max: float = 3.0    # degrees
    elevation_min: float = -25.0  # degrees
    max_range: float = 120.0      # meters
    range_noise: float = 0.0      # sigma, meters

    def __post_init__(self):
        if self.channels < 2:
            raise ValueError("need at least 2 channels")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    def ray_directions(self) -> np.ndarray:
        """Unit directions in the sensor frame, ordered by (channel, step)."""
        c = np.arange(self.channels)
        span = self.elevation_max - self.elevation_min
        elev = np.radians(self.elevation_max - (c + 0.5) / self.channels * span)
        a = np.arange(self.horizontal_steps)
        azim = 2.0 * np.pi * (1.0 - (a + 0.5) / self.horizontal_steps) - np.pi
        ce, se = np.cos(elev), np.sin(elev)
        ca, sa = np.cos(azim), np.sin(azim)
        dirs = np.empty((self.channels, self.horizontal_steps, 3))
        dirs[:, :, 0] = ce[:, None] * ca[None, :]
        dirs[:, :, 1] = ce[:, None] * sa[None, :]
        dirs[:, :, 2] = se[:, None]
        return dirs.reshape(-1, 3)


def raycast_scan(scene: Scene, pose: Pose, model: LidarModel,
                 rng: np.random.Generator | None = None) -> PointCloud:
    """Cast one sweep from the given sensor pose; misses produce no point.

    Surfaces are two-sided. Points come back in the sensor frame, ordered by
    (channel, step); optional Gaussian range noise uses the supplied rng.
    """
    comp = scene.compiled()
    dirs_sensor = model.ray_directions()
    dirs_world = dirs_sensor @ pose.rotation.T
    o = pose.translation
    numer = comp["plane_d"] - comp["normal"] @ o     # (M,)
    o_minus = o[None, :] - comp["origin"]            # (M, 3)
    ou = (o_minus * comp["u"]).sum(axis=1)
    ov = (o_minus * comp["v"]).sum(axis=1)

    n_rays = dirs_world.shape[0]
    best_t = np.full(n_rays, np.inf)
    chunk = 4096
    for s in range(0, n_rays, chunk):
        d = dirs_world[s:s + chunk]
        denom = d @ comp["normal"].T                 # (c, M)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = numer[None, :] / denom
        alpha = ou[None, :] + t * (d @ comp["u"].T)
        beta = ov[None, :] + t * (d @ comp["v"].T)
        ok = (np.abs(denom) > 1e-12) & (t >= RAY_T_MIN) & (t <= model.max_range)
        ok &= (alpha >= 0) & (alpha <= comp["uu"]) & (beta >= 0) & (beta <= comp["vv"])
        t = np.where(ok, t, np.inf)
        best_t[s:s + chunk] = t.min(axis=1)
    hit = np.isfinite(best_t)
    t_hit = best_t[hit]
    if model.range_noise > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        t_hit = t_hit + rng.normal(0.0, model.range_noise, size=t_hit.shape)
    points = dirs_sensor[hit] * t_hit[:, None]
    return PointCloud(points)


def generate_sequence(scene: Scene, traj: Trajectory, model: LidarModel,
                      out_dir: str, seed: int = 0) -> None:
    """Write one kitti-bin scan per pose plus the ground-truth pose file.

    Produces <out_dir>/velodyne/%06d.bin and <out_dir>/poses.txt with poses
    re-anchored to the first frame, a layout the pipeline consumes directly.
    """
    scan_dir = os.path.join(out_dir, "velodyne")
    os.makedirs(scan_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i, pose in enumerate(traj.poses):
        pc = raycast_scan(scene, pose, model, rng)
        rec = np.zeros((len(pc), 4), dtype="<f4")
        rec[:, :3] = pc.points
        rec.tofile(os.path.join(scan_dir, f"{i:06d}.bin"))
    anchor = traj.poses[0].inverse() if traj.poses else Pose.identity()
    anchored = Trajectory([anchor.compose(p) for p in traj.poses])
    write_trajectory(anchored, os.path.join(out_dir, "poses.txt"))


def scripted_trajectory(kind: str, frames: int, *, center=(0.0, 0.0),
                        radius: float = 20.0, height: float = 0.0,
                        arc_degrees: float = 360.0, start=(0.0, 0.0, 0.0),
                        direction=(1.0, 0.0, 0.0), speed: float = 1.0,
                        yaw_jumps: list[tuple[int, float]] | None = None) -> Trajectory:
    """Build a world-frame trajectory for the simulator.

    Kinds: 'static' (fixed origin), 'line' (constant velocity along a
    direction), 'circle' (arc around center with tangent heading). yaw_jumps
    is a list of (frame, degrees) persistent heading offsets.
    """
    if frames < 1:
        raise ValueError("need at least one frame")
    jump_at = np.zeros(frames)
    for f, deg in (yaw_jumps or []):
        if 0 <= f < frames:
            jump_at[f] += np.radians(deg)
    jump_offset = np.cumsum(jump_at)

    poses = []
    if kind == "static":
        poses = [Pose(rot_z(jump_offset[i]), np.zeros(3)) for i in range(frames)]
    elif kind == "line":
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        yaw0 = np.arctan2(d[1], d[0])
        for i in range(frames):
            t = np.asarray(start, dtype=float) + d * speed * i
            poses.append(Pose(rot_z(yaw0 + jump_offset[i]), t))
    elif kind == "circle":
        cx, cy = center
        arc = np.radians(arc_degrees)
        for i in range(frames):
            a = arc * i / frames
            t = np.array([cx + radius * np.cos(a), cy + radius * np.sin(a), height])
            poses.append(Pose(rot_z(a + np.pi / 2.0 + jump_offset[i]), t))
    else:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    return Trajectory(poses)


def build_scene(path: str) -> Scene:
    """Load the [scene] section of a simulator config file."""
    data = _load_toml(path)
    return _scene_from_dict(data.get("scene", {}))


def load_sim_config(path: str):
    """Full simulator job: (Scene, LidarModel, Trajectory, seed)."""
    data = _load_toml(path)
    scene = _scene_from_dict(data.get("scene", {}))
    model = LidarModel(**data.get("lidar", {}))
    tspec = dict(data.get("trajectory", {}))
    kind = tspec.pop("kind", "static")
    frames = int(tspec.pop("frames", 1))
    if "yaw_jumps" in tspec:
        tspec["yaw_jumps"] = [(int(f), float(deg)) for f, deg in tspec["yaw_jumps"]]
    try:
        traj = scripted_trajectory(kind, frames, **tspec)
    except TypeError as e:
        raise SceneSpecError(f"{path}: bad trajectory spec: {e}") from e
    seed = int(data.get("simulation", {}).get("seed", 0))
    return scene, model, traj, seed


def _load_toml(path: str) -> dict:
    with open(path, "rb") as f:
        try:
            return tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise SceneSpecError(f"{path}: {e}") from e


def _scene_from_dict(spec: dict) -> Scene:
    scene = Scene()
    try:
        for rect in spec.get("rect", []):
            scene.add(Rect(rect["origin"], rect["u"], rect["v"]))
        for box in spec.get("box", []):
            scene.add(Box(box["min"], box["max"]))
    except (KeyError, ValueError) as e:
        raise SceneSpecError(f"bad scene primitive: {e}") from e
    if not scene.primitives:
        raise SceneSpecError("scene has no primitives")
    return scene
