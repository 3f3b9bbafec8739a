"""Spherical vertex maps, stencil normals, and top-down elevation images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud_io import PointCloud

CROSS_NORM_TOL = 1e-9


@dataclass(frozen=True)
class ProjectionSpec:
    """Geometry of the spherical image: size and vertical field of view."""

    height: int = 64
    width: int = 720
    elevation_max: float = 3.0    # degrees
    elevation_min: float = -25.0  # degrees

    def __post_init__(self):
        if self.height < 2 or self.width < 4:
            raise ValueError("projection grid too small")
        if self.elevation_max <= self.elevation_min:
            raise ValueError("elevation_max must exceed elevation_min")


@dataclass
class VertexMap:
    """Spherical image whose activated pixels store projected 3D points."""

    grid: np.ndarray   # (H, W, 3)
    mask: np.ndarray   # (H, W) bool
    range: np.ndarray  # (H, W) meters, 0 where deactivated
    spec: ProjectionSpec

    def active_points(self) -> np.ndarray:
        """Coordinates of all activated pixels, row-major order."""
        return self.grid[self.mask]


@dataclass
class NormalMap:
    grid: np.ndarray  # (H, W, 3) unit normals
    mask: np.ndarray  # (H, W) bool


def project_to_grid(points: np.ndarray, spec: ProjectionSpec):
    """Map points onto (row, col) pixel indices.

    Returns (rows, cols, ranges, keep) where keep flags the points inside the
    elevation band and away from the sensor origin.
    """
    points = np.asarray(points, dtype=float)
    r = np.linalg.norm(points, axis=1)
    keep = r > 1e-12
    elev = np.zeros(len(r))
    elev[keep] = np.degrees(np.arcsin(np.clip(points[keep, 2] / r[keep], -1.0, 1.0)))
    keep &= (elev >= spec.elevation_min) & (elev <= spec.elevation_max)

    azim = np.arctan2(points[:, 1], points[:, 0])
    cols = np.floor(spec.width * (1.0 - (azim + np.pi) / (2.0 * np.pi))).astype(int)
    np.clip(cols, 0, spec.width - 1, out=cols)
    span = spec.elevation_max - spec.elevation_min
    rows = np.floor(spec.height * (spec.elevation_max - elev) / span).astype(int)
    np.clip(rows, 0, spec.height - 1, out=rows)
    return rows, cols, r, keep


def spherical_project(pc: PointCloud, spec: ProjectionSpec) -> VertexMap:
    """Rasterize a scan into a vertex map, keeping the closest point per pixel."""
    if len(pc) == 0:
        raise ValueError("cannot project an empty cloud")
    rows, cols, r, keep = project_to_grid(pc.points, spec)
    points = pc.points[keep]
    rows, cols, r = rows[keep], cols[keep], r[keep]

    grid = np.zeros((spec.height, spec.width, 3))
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    rng = np.zeros((spec.height, spec.width))
    if len(points) == 0:
        return VertexMap(grid, mask, rng, spec)

    pix = rows * spec.width + cols
    # Stable sort by (pixel, range): the first entry per pixel wins.
    order = np.lexsort((r, pix))
    pix_sorted = pix[order]
    first = np.ones(len(pix_sorted), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    sel = order[first]
    grid[rows[sel], cols[sel]] = points[sel]
    rng[rows[sel], cols[sel]] = r[sel]
    mask[rows[sel], cols[sel]] = True
    return VertexMap(grid, mask, rng, spec)


def normal_map(vm: VertexMap) -> NormalMap:
    """Cross-product normals from the right and down neighbors of each pixel.

    The azimuth axis wraps; the last row has no down neighbor. Normals are
    oriented toward the sensor (n . v <= 0) and pixels with a missing
    neighbor or a degenerate cross product are deactivated.
    """
    v = vm.grid
    right = np.roll(v, -1, axis=1)
    right_mask = np.roll(vm.mask, -1, axis=1)
    down = np.empty_like(v)
    down[:-1] = v[1:]
    down[-1] = 0.0
    down_mask = np.zeros_like(vm.mask)
    down_mask[:-1] = vm.mask[1:]

    n = np.cross(right - v, down - v)
    norm = np.linalg.norm(n, axis=2)
    valid = vm.mask & right_mask & down_mask & (norm >= CROSS_NORM_TOL)
    n = np.divide(n, norm[..., None], out=np.zeros_like(n), where=valid[..., None])
    flip = (n * v).sum(axis=2) > 0
    n[flip] = -n[flip]
    n[~valid] = 0.0
    return NormalMap(n, valid)


@dataclass
class ElevationImage:
    """Sensor-centered top-down raster of maximum point heights."""

    heights: np.ndarray  # (R, R) meters, only meaningful where mask is set
    mask: np.ndarray     # (R, R) bool
    pixel_size: float
    resolution: int

    def to_gray(self, band: tuple[float, float] = (-2.0, 6.0)) -> np.ndarray:
        """Quantize heights over the band into a uint8 image (empty cells 0)."""
        lo, hi = band
        g = np.clip((self.heights - lo) / (hi - lo), 0.0, 1.0)
        img = np.rint(g * 255.0).astype(np.uint8)
        img[~self.mask] = 0
        return img

    def world_to_pixel(self, xy: np.ndarray) -> np.ndarray:
        """(x, y) meters -> fractional (col, row) image coordinates."""
        half = self.resolution * self.pixel_size / 2.0
        return (np.asarray(xy, dtype=float) + half) / self.pixel_size

    def pixel_to_world(self, rows: np.ndarray, cols: np.ndarray):
        """Cell centers back to world (x, y) meters."""
        half = self.resolution * self.pixel_size / 2.0
        x = (np.asarray(cols) + 0.5) * self.pixel_size - half
        y = (np.asarray(rows) + 0.5) * self.pixel_size - half
        return x, y


def elevation_image(pc: PointCloud, pixel_size: float = 0.30, resolution: int = 800,
                    min_z: float | None = None) -> ElevationImage:
    """Rasterize a cloud into a top-down max-height image around the sensor.

    min_z optionally drops points below a height before rasterizing.
    """
    if len(pc) == 0:
        raise ValueError("cannot rasterize an empty cloud")
    pts = pc.points
    if min_z is not None:
        pts = pts[pts[:, 2] >= min_z]
    half = resolution * pixel_size / 2.0
    cols = np.floor((pts[:, 0] + half) / pixel_size).astype(int)
    rows = np.floor((pts[:, 1] + half) / pixel_size).astype(int)
    inside = (cols >= 0) & (cols < resolution) & (rows >= 0) & (rows < resolution)
    heights = np.full((resolution, resolution), -np.inf)
    np.maximum.at(heights, (rows[inside], cols[inside]), pts[inside, 2])
    mask = np.isfinite(heights)
    heights[~mask] = 0.0
    return ElevationImage(heights, mask, pixel_size, resolution)


def write_range_pgm(vm: VertexMap, path: str) -> None:
    """Dump the range channel as a 16-bit PGM (millimeters, clipped)."""
    mm = np.clip(np.rint(vm.range * 1000.0), 0, 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{vm.range.shape[1]} {vm.range.shape[0]}\n65535\n".encode())
        f.write(mm.tobytes())


def write_elevation_pgm(ei: ElevationImage, path: str,
                        band: tuple[float, float] = (-2.0, 6.0)) -> None:
    """Dump the quantized elevation image as an 8-bit PGM."""
    img = ei.to_gray(band)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())
