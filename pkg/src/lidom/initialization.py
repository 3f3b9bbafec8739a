"""Initial-motion providers: identity, constant velocity, elevation-image
matching, and external per-frame poses."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .cloud_io import PointCloud, Trajectory
from .geom import Pose, rot_z
from .projection import elevation_image

TRUSTED = "trusted"
FALLBACK = "fallback"

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(axis=1)


class ExternalPoseError(ValueError):
    """External pose provider does not cover a requested frame."""


@dataclass(frozen=True)
class InitResult:
    pose: Pose
    confidence: str
    inlier_count: int = 0


@dataclass(frozen=True)
class EiParams:
    """Elevation-image matcher settings."""

    pixel_size: float = 0.30
    resolution: int = 800
    height_band: tuple[float, float] = (-2.0, 6.0)
    min_z: float | None = None
    n_features: int = 500
    fast_threshold: int = 20
    ratio: float = 0.8
    ransac_iterations: int = 1000
    inlier_threshold_px: float = 2.0
    min_inliers: int = 100   # N_I: consensus size needed to trust the fit
    min_features: int = 8
    seed: int = 0


def predict_identity() -> InitResult:
    return InitResult(Pose.identity(), FALLBACK)


def predict_constant_velocity(traj: Trajectory) -> InitResult:
    """Previous relative motion, or identity while fewer than 2 poses exist."""
    if len(traj) < 2:
        return InitResult(Pose.identity(), FALLBACK)
    delta = traj.poses[-2].inverse().compose(traj.poses[-1])
    return InitResult(delta, TRUSTED)


def predict_external(provider: Trajectory, frame_index: int) -> InitResult:
    """Relative pose read from a precomputed trajectory."""
    if frame_index < 1 or frame_index >= len(provider):
        raise ExternalPoseError(
            f"external pose file does not cover frame {frame_index} "
            f"(has {len(provider)} poses)")
    delta = provider.poses[frame_index - 1].inverse().compose(provider.poses[frame_index])
    return InitResult(delta, TRUSTED)


def predict_elevation_image(prev: PointCloud, cur: PointCloud,
                            params: EiParams = EiParams()) -> InitResult:
    """2D motion estimate from feature matching between elevation images.

    Rasterizes both clouds top-down, extracts oriented binary features,
    matches them with a ratio test, and fits a homography by random-sample
    consensus. The relative pose (yaw and planar translation; z, roll and
    pitch zero) comes from a rigid least-squares fit over the consensus set
    and is trusted only when the consensus reaches min_inliers.
    """
    img_prev = _rasterize(prev, params)
    img_cur = _rasterize(cur, params)
    orb = cv2.ORB_create(nfeatures=params.n_features,
                         fastThreshold=params.fast_threshold)
    kp_prev, desc_prev = orb.detectAndCompute(img_prev, None)
    kp_cur, desc_cur = orb.detectAndCompute(img_cur, None)
    if len(kp_prev) < params.min_features or len(kp_cur) < params.min_features:
        return InitResult(Pose.identity(), FALLBACK)

    pairs = _ratio_matches(desc_prev, desc_cur, params.ratio)
    if len(pairs) < 4:
        return InitResult(Pose.identity(), FALLBACK)
    src = np.array([kp_prev[i].pt for i, _ in pairs])  # (N, 2) pixel coords
    dst = np.array([kp_cur[j].pt for _, j in pairs])

    inliers = _ransac_homography(src, dst, params)
    if inliers.sum() < 2:
        return InitResult(Pose.identity(), FALLBACK)
    n_inliers = int(inliers.sum())
    if n_inliers < params.min_inliers:
        return InitResult(Pose.identity(), FALLBACK, n_inliers)

    r2, d = _fit_rigid_2d(src[inliers], dst[inliers])
    pose = _pixel_motion_to_pose(r2, d, params)
    return InitResult(pose, TRUSTED, n_inliers)


def _rasterize(pc: PointCloud, params: EiParams) -> np.ndarray:
    ei = elevation_image(pc, params.pixel_size, params.resolution,
                         min_z=params.min_z)
    return ei.to_gray(params.height_band)


def _ratio_matches(desc_a: np.ndarray, desc_b: np.ndarray,
                   ratio: float) -> list[tuple[int, int]]:
    """Hamming-distance matches from a to b passing the ratio test."""
    if desc_a is None or desc_b is None or len(desc_b) < 2:
        return []
    dist = _POPCOUNT[desc_a[:, None, :] ^ desc_b[None, :, :]].sum(axis=2)
    two = np.argpartition(dist, 1, axis=1)[:, :2]
    rows = np.arange(len(desc_a))
    d_two = dist[rows[:, None], two]
    swap = d_two[:, 0] > d_two[:, 1]
    two[swap] = two[swap][:, ::-1]
    d_two[swap] = d_two[swap][:, ::-1]
    good = d_two[:, 0] < ratio * d_two[:, 1]
    return [(int(i), int(two[i, 0])) for i in np.flatnonzero(good)]


def _homography_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Normalized DLT homography from >= 4 point pairs (src -> dst)."""

    def normalize(pts):
        c = pts.mean(axis=0)
        scale = np.sqrt(2.0) / max(np.linalg.norm(pts - c, axis=1).mean(), 1e-12)
        t = np.array([[scale, 0, -scale * c[0]],
                      [0, scale, -scale * c[1]],
                      [0, 0, 1.0]])
        return (pts - c) * scale, t

    sn, ts = normalize(src)
    dn, td = normalize(dst)
    n = len(src)
    a = np.zeros((2 * n, 9))
    a[0::2, 0:2] = sn
    a[0::2, 2] = 1.0
    a[0::2, 6:8] = -dn[:, 0:1] * sn
    a[0::2, 8] = -dn[:, 0]
    a[1::2, 3:5] = sn
    a[1::2, 5] = 1.0
    a[1::2, 6:8] = -dn[:, 1:2] * sn
    a[1::2, 8] = -dn[:, 1]
    try:
        _, s, vt = np.linalg.svd(a)
    except np.linalg.LinAlgError:
        return None
    h = vt[-1].reshape(3, 3)
    if abs(h[2, 2]) < 1e-12:
        return None
    h = np.linalg.inv(td) @ h @ ts
    return h / h[2, 2]


def _homography_errors(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    ones = np.ones((len(src), 1))
    proj = np.hstack([src, ones]) @ h.T
    wcomp = proj[:, 2]
    bad = np.abs(wcomp) < 1e-12
    wcomp = np.where(bad, 1.0, wcomp)
    xy = proj[:, :2] / wcomp[:, None]
    err = np.linalg.norm(xy - dst, axis=1)
    err[bad] = np.inf
    return err


def _ransac_homography(src: np.ndarray, dst: np.ndarray,
                       params: EiParams) -> np.ndarray:
    """Best consensus inlier mask over seeded random 4-point samples."""
    rng = np.random.default_rng(params.seed)
    n = len(src)
    best = np.zeros(n, dtype=bool)
    for _ in range(params.ransac_iterations):
        sample = rng.choice(n, size=4, replace=False)
        h = _homography_dlt(src[sample], dst[sample])
        if h is None:
            continue
        inl = _homography_errors(h, src, dst) <= params.inlier_threshold_px
        if inl.sum() > best.sum():
            best = inl
    return best


def _fit_rigid_2d(src: np.ndarray, dst: np.ndarray):
    """Least-squares rotation + translation mapping src to dst (pixels)."""
    mean_s = src.mean(axis=0)
    mean_d = dst.mean(axis=0)
    c = (dst - mean_d).T @ (src - mean_s)
    u, _, vt = np.linalg.svd(c)
    sign = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, sign]) @ vt
    d = mean_d - r @ mean_s
    return r, d


def _pixel_motion_to_pose(r2: np.ndarray, d: np.ndarray, params: EiParams) -> Pose:
    """Convert the image-space rigid motion into the relative sensor pose.

    Pixel coords map to world (x, y) by w = s*u + o with s = pixel_size, so
    the same rotation acts in world space: w_cur = R2 w_prev + d_w. The
    relative pose (new frame w.r.t. previous) is its inverse.
    """
    s = params.pixel_size
    half = params.resolution * s / 2.0
    o = np.array([0.5 * s - half, 0.5 * s - half])
    d_w = s * d + o - r2 @ o
    t_xy = -r2.T @ d_w
    yaw = -np.arctan2(r2[1, 0], r2[0, 0])
    return Pose(rot_z(yaw), np.array([t_xy[0], t_xy[1], 0.0]))
