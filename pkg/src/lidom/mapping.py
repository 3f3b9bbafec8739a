"""Sliding-window local map with tree-based and projective query views."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .association import (Correspondences, NeighborIndex, PixelCandidates,
                          pair_weights, pca_normals, projective_associate)
from .cloud_io import PointCloud, write_ply
from .geom import Pose
from .projection import (NormalMap, ProjectionSpec, VertexMap, normal_map,
                         project_to_grid)

# floor(coord / size) packed per axis into one int64 key
_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)


def _voxel_keys(points: np.ndarray, size: float) -> np.ndarray:
    ijk = np.floor(points / size).astype(np.int64) + _KEY_OFFSET
    if ijk.min() < 0 or ijk.max() >= (1 << _KEY_BITS):
        raise ValueError("points exceed the voxel key range")
    return (ijk[:, 0] << (2 * _KEY_BITS)) | (ijk[:, 1] << _KEY_BITS) | ijk[:, 2]


def voxel_sample(points: np.ndarray, size: float) -> np.ndarray:
    """One representative per occupied voxel: the member closest to the
    member centroid. Deterministic for a fixed input order."""
    if size <= 0:
        raise ValueError("voxel size must be positive")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if points.shape[0] == 0:
        return points.copy()
    keys = _voxel_keys(points, size)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    sorted_pts = points[order]
    first = np.ones(len(sorted_keys), dtype=bool)
    first[1:] = sorted_keys[1:] != sorted_keys[:-1]
    starts = np.flatnonzero(first)
    counts = np.diff(np.append(starts, len(sorted_keys)))

    sums = np.add.reduceat(sorted_pts, starts, axis=0)
    centroids = sums / counts[:, None]
    seg = np.repeat(np.arange(len(starts)), counts)
    d2 = ((sorted_pts - centroids[seg]) ** 2).sum(axis=1)
    mins = np.minimum.reduceat(d2, starts)
    is_min = d2 == mins[seg]
    hits = np.flatnonzero(is_min)
    # first minimal member of each segment; stable sort preserved input order
    pick = hits[np.searchsorted(hits, starts, side="left")]
    return sorted_pts[pick]


@dataclass
class KdMapView:
    """Voxel-sampled world points with PCA normals behind a k-d index."""

    points: np.ndarray
    normals: np.ndarray
    valid: np.ndarray
    index: NeighborIndex
    frame: Pose              # world pose of the view frame (identity: world)
    pairing_radius: float = 1.0

    @staticmethod
    def from_points(points: np.ndarray, viewpoint: np.ndarray,
                    pca_neighbors: int = 20, pairing_radius: float = 1.0,
                    voxel_size: float | None = None) -> "KdMapView":
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if voxel_size:
            points = voxel_sample(points, voxel_size)
        index = NeighborIndex(points)
        k = min(pca_neighbors, len(points))
        normals, valid = pca_normals(points, index, max(k, 3), viewpoint)
        return KdMapView(points, normals, valid, index, Pose.identity())

    def associate(self, points: np.ndarray, pose: Pose, sigma: float) -> Correspondences:
        p = pose.transform(points)
        idx, _ = self.index.query(p, self.pairing_radius)
        keep = idx >= 0
        keep[keep] &= self.valid[idx[keep]]
        idx = idx[keep]
        p = p[keep]
        q = self.index.points[idx]
        n = self.normals[idx]
        return Correspondences(p, q, n, pair_weights(p, q, sigma))


@dataclass
class ProjMapView:
    """Map rendered as a vertex/normal map in the last registered frame."""

    vm: VertexMap
    nm: NormalMap
    candidates: PixelCandidates
    frame: Pose

    def associate(self, points: np.ndarray, pose: Pose, sigma: float) -> Correspondences:
        return projective_associate(self.vm, self.nm, points, pose, sigma,
                                    candidates=self.candidates)


def render_candidates(points: np.ndarray, spec: ProjectionSpec,
                      max_candidates: int = 4) -> tuple[VertexMap, PixelCandidates]:
    """Rasterize points keeping up to max_candidates closest-range points
    per pixel; the rendered vertex map holds the closest one."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    rows, cols, r, keep = project_to_grid(points, spec)
    points, rows, cols, r = points[keep], rows[keep], cols[keep], r[keep]
    grid = np.zeros((spec.height, spec.width, 3))
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    rng = np.zeros((spec.height, spec.width))
    starts_full = np.zeros(spec.height * spec.width + 1, dtype=np.int64)
    if len(points) == 0:
        return (VertexMap(grid, mask, rng, spec),
                PixelCandidates(points, starts_full))

    pix = rows * spec.width + cols
    order = np.lexsort((r, pix))
    pix_s, pts_s, r_s = pix[order], points[order], r[order]
    first = np.ones(len(pix_s), dtype=bool)
    first[1:] = pix_s[1:] != pix_s[:-1]
    seg_starts = np.flatnonzero(first)
    counts = np.diff(np.append(seg_starts, len(pix_s)))
    take = np.minimum(counts, max_candidates)

    # indices of the retained entries: the first `take` of each segment
    offsets = np.arange(take.sum()) - np.repeat(np.cumsum(take) - take, take)
    sel = np.repeat(seg_starts, take) + offsets
    cand_points = pts_s[sel]
    upix = pix_s[seg_starts]
    starts_full[upix + 1] = take
    starts_full = np.cumsum(starts_full)

    top = seg_starts
    grid[rows[order][top], cols[order][top]] = pts_s[top]
    rng[rows[order][top], cols[order][top]] = r_s[top]
    mask[rows[order][top], cols[order][top]] = True
    return VertexMap(grid, mask, rng, spec), PixelCandidates(cand_points, starts_full)


class LocalMap:
    """Sliding window of the last k registered scans with world-frame caches."""

    def __init__(self, capacity: int = 30):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._frames: deque[tuple[PointCloud, Pose, np.ndarray]] = deque()

    def __len__(self) -> int:
        return len(self._frames)

    def insert_frame(self, pc: PointCloud, pose: Pose) -> None:
        """Append a registered scan; evicts the oldest frame over capacity."""
        world = pose.transform(pc.points)
        self._frames.append((pc, pose, world))
        while len(self._frames) > self.capacity:
            self._frames.popleft()

    def last_pose(self) -> Pose:
        if not self._frames:
            raise ValueError("map is empty")
        return self._frames[-1][1]

    def world_points(self) -> np.ndarray:
        if not self._frames:
            raise ValueError("map is empty")
        return np.vstack([w for _, _, w in self._frames])

    def kd_view(self, voxel_size: float = 0.4, pca_neighbors: int = 20,
                pairing_radius: float = 1.0) -> KdMapView:
        """Voxel-sampled tree view over the aggregated window, with normals
        oriented toward the last sensor origin."""
        pts = voxel_sample(self.world_points(), voxel_size)
        index = NeighborIndex(pts)
        k = max(3, min(pca_neighbors, len(pts)))
        normals, valid = pca_normals(pts, index, k, self.last_pose().translation)
        return KdMapView(pts, normals, valid, index, Pose.identity(),
                         pairing_radius=pairing_radius)

    def projective_view(self, spec: ProjectionSpec,
                        max_candidates: int = 4) -> ProjMapView:
        """Render the window in the last registered frame."""
        frame = self.last_pose()
        local = frame.inverse().transform(self.world_points())
        vm, candidates = render_candidates(local, spec, max_candidates)
        nm = normal_map(vm)
        return ProjMapView(vm, nm, candidates, frame)

    def export_ply(self, path: str) -> None:
        write_ply(self.world_points(), path)
