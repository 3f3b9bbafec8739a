"""Correspondence search: k-d tree queries, PCA normals, projective pairing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geom import Pose
from .projection import NormalMap, VertexMap, project_to_grid

DEGENERATE_EIG_TOL = 1e-9


class NeighborIndex:
    """Exact nearest-neighbor index over a fixed point array.

    Backed by a median-split k-d tree with leaf size 16; the point array is
    copied and immutable after build.
    """

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if points.shape[0] == 0:
            raise ValueError("cannot build an index over an empty point set")
        if not np.isfinite(points).all():
            raise ValueError("index points must be finite")
        self.points = points.copy()
        self.points.setflags(write=False)
        self._tree = cKDTree(self.points, leafsize=16, balanced_tree=True)

    def __len__(self) -> int:
        return self.points.shape[0]

    def query(self, queries: np.ndarray, r_max: float = np.inf):
        """Nearest neighbor per query point within r_max.

        Returns (indices, distances); misses hold index -1 and distance inf.
        """
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        dist, idx = self._tree.query(queries, k=1, distance_upper_bound=r_max)
        miss = ~np.isfinite(dist)
        idx = np.where(miss, -1, idx)
        return idx, dist

    def query_k(self, queries: np.ndarray, k: int):
        """k nearest neighbors per query point (no radius cut)."""
        dist, idx = self._tree.query(np.asarray(queries, dtype=float), k=k)
        return idx, dist

    def nearest(self, q: np.ndarray, r_max: float = np.inf):
        """Single-point query: (point, distance) or None beyond r_max."""
        idx, dist = self.query(np.asarray(q, dtype=float).reshape(1, 3), r_max)
        if idx[0] < 0:
            return None
        return self.points[idx[0]], float(dist[0])


def build_index(points: np.ndarray) -> NeighborIndex:
    return NeighborIndex(points)


def pca_normals(points: np.ndarray, index: NeighborIndex, k: int,
                viewpoint: np.ndarray):
    """Per-point normals from the covariance of the k nearest neighbors.

    The normal is the eigenvector of the smallest eigenvalue, oriented so
    n . (viewpoint - point) >= 0. Points whose two smallest eigenvalues
    coincide (within DEGENERATE_EIG_TOL) are marked invalid.

    Returns (normals (N, 3), valid (N,) bool).
    """
    if k < 3:
        raise ValueError("pca_normals requires k >= 3")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if points.shape[0] < k:
        raise ValueError(f"need at least {k} points, got {points.shape[0]}")
    idx, _ = index.query_k(points, k)
    neigh = index.points[idx]                      # (N, k, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigval, eigvec = np.linalg.eigh(cov)           # ascending eigenvalues
    normals = eigvec[:, :, 0]
    valid = (eigval[:, 1] - eigval[:, 0]) >= DEGENERATE_EIG_TOL
    toward = np.asarray(viewpoint, dtype=float) - points
    flip = (normals * toward).sum(axis=1) < 0
    normals[flip] = -normals[flip]
    normals[~valid] = 0.0
    return normals, valid


def pair_weights(p: np.ndarray, q: np.ndarray, sigma: float) -> np.ndarray:
    """exp(-|p-q|^2 / sigma^2), elementwise over correspondence arrays."""
    d2 = ((np.asarray(p) - np.asarray(q)) ** 2).sum(axis=-1)
    return np.exp(-d2 / sigma**2)


@dataclass
class Correspondences:
    """Paired scan points, map points, map normals, and weights."""

    p: np.ndarray  # (N, 3) scan points, already transformed
    q: np.ndarray  # (N, 3) map points
    n: np.ndarray  # (N, 3) unit map normals
    w: np.ndarray  # (N,)

    def __len__(self) -> int:
        return self.p.shape[0]

    @staticmethod
    def empty() -> "Correspondences":
        z = np.zeros((0, 3))
        return Correspondences(z, z, z, np.zeros(0))


def projective_associate(vm: VertexMap, nm: NormalMap, points: np.ndarray,
                         pose: Pose, sigma: float,
                         candidates: "PixelCandidates | None" = None) -> Correspondences:
    """Pair transformed scan points with map points sharing their pixel.

    Without candidate lists the map point is the rendered vertex itself;
    with candidates, the closest of the per-pixel retained points is used.
    Points landing outside the band or on deactivated pixels yield nothing.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    p = pose.transform(points)
    rows, cols, _, keep = project_to_grid(p, vm.spec)
    keep &= vm.mask[rows, cols] & nm.mask[rows, cols]
    p = p[keep]
    rows, cols = rows[keep], cols[keep]
    if len(p) == 0:
        return Correspondences.empty()
    if candidates is None:
        q = vm.grid[rows, cols]
    else:
        q = candidates.closest(rows * vm.spec.width + cols, p)
    n = nm.grid[rows, cols]
    return Correspondences(p, q, n, pair_weights(p, q, sigma))


class PixelCandidates:
    """CSR-style per-pixel lists of map points, sorted by range.

    points holds the retained map points grouped by pixel; starts[pix] ..
    starts[pix + 1] bounds the group of pixel pix.
    """

    def __init__(self, points: np.ndarray, starts: np.ndarray):
        self.points = points
        self.starts = starts
        counts = np.diff(starts)
        self.depth = int(counts.max()) if len(counts) and counts.max() > 0 else 0

    def closest(self, pix: np.ndarray, p: np.ndarray) -> np.ndarray:
        """For each query pixel (assumed non-empty), the candidate nearest to p."""
        s = self.starts[pix]
        e = self.starts[pix + 1]
        width = max(self.depth, 1)
        cand_idx = s[:, None] + np.arange(width)[None, :]
        in_range = cand_idx < e[:, None]
        cand_idx = np.minimum(cand_idx, len(self.points) - 1)
        cand = self.points[cand_idx]                     # (N, depth, 3)
        d2 = ((cand - p[:, None, :]) ** 2).sum(axis=2)
        d2[~in_range] = np.inf
        pick = np.argmin(d2, axis=1)
        return cand[np.arange(len(p)), pick]
