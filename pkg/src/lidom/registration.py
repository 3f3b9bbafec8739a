"""Weighted point-to-plane Gauss-Newton steps and the ICP driver loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .association import Correspondences
from .geom import Pose, Twist, exp_twist


class DegenerateGeometryError(RuntimeError):
    """Raised when the correspondence set cannot constrain a pose update."""


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 20
    translation_tolerance: float = 1e-4  # meters
    rotation_tolerance: float = 1e-4     # radians
    sigma: float = 0.5                   # meters, pair-weight scale
    min_correspondences: int = 100
    hard_residual_cutoff: float | None = None  # meters; off by default

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if min(self.translation_tolerance, self.rotation_tolerance, self.sigma) <= 0:
            raise ValueError("tolerances and sigma must be positive")


@dataclass
class IcpDiagnostics:
    iterations_run: int
    final_energy: float
    correspondence_count: int
    converged: bool


def weight(p: np.ndarray, q: np.ndarray, sigma: float) -> float:
    """Pair weight exp(-|p-q|^2 / sigma^2)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d2 = float(((np.asarray(p, dtype=float) - np.asarray(q, dtype=float)) ** 2).sum())
    return float(np.exp(-d2 / sigma**2))


def point_to_plane_energy(corr: Correspondences) -> float:
    """Weighted sum of squared point-to-plane residuals, in m^2."""
    r = ((corr.p - corr.q) * corr.n).sum(axis=1)
    return float((corr.w * r**2).sum())


def residual_jacobian(corr: Correspondences):
    """Residuals r_i = n_i . (p_i - q_i) and rows J_i = [p_i x n_i ; n_i].

    The rows are the derivative of the residual under a left-multiplicative
    twist applied at the current estimate, rotation part first.
    """
    r = ((corr.p - corr.q) * corr.n).sum(axis=1)
    jac = np.hstack([np.cross(corr.p, corr.n), corr.n])
    return r, jac


def gauss_newton_step(corr: Correspondences) -> Twist:
    """Solve the weighted normal equations for one point-to-plane update.

    Falls back to a tiny Levenberg shift (1e-6 * trace / 6 on the diagonal)
    when the 6x6 system is not positive definite.
    """
    if len(corr) < 6:
        raise DegenerateGeometryError(f"{len(corr)} correspondences cannot fix 6 DoF")
    r, jac = residual_jacobian(corr)
    if not (np.isfinite(r).all() and np.isfinite(jac).all()):
        raise ValueError("non-finite residual in correspondence set")
    wj = corr.w[:, None] * jac
    h = wj.T @ jac
    b = -wj.T @ r
    try:
        x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(h), b)
    except np.linalg.LinAlgError:
        lam = 1e-6 * np.trace(h) / 6.0
        if lam <= 0:
            raise DegenerateGeometryError("normal equations have zero trace")
        try:
            x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(h + lam * np.eye(6)), b)
        except np.linalg.LinAlgError as e:
            raise DegenerateGeometryError("normal equations not positive definite") from e
    return Twist(x[:3], x[3:])


def _apply_cutoff(corr: Correspondences, cutoff: float) -> Correspondences:
    keep = np.linalg.norm(corr.p - corr.q, axis=1) <= cutoff
    return Correspondences(corr.p[keep], corr.q[keep], corr.n[keep], corr.w[keep])


def icp(scan_points: np.ndarray, map_view, init: Pose,
        params: IcpParams = IcpParams()) -> tuple[Pose, IcpDiagnostics]:
    """Iterate association and Gauss-Newton updates until the pose settles.

    map_view must provide associate(points, pose, sigma) -> Correspondences
    expressed in the view frame; init and the returned pose live in that
    same frame. When association never reaches min_correspondences the init
    pose is returned with converged=False.
    """
    scan_points = np.asarray(scan_points, dtype=float).reshape(-1, 3)
    if scan_points.shape[0] == 0:
        raise ValueError("empty scan")
    pose = init
    converged = False
    stepped = False
    energy = np.inf
    count = 0
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        corr = map_view.associate(scan_points, pose, sigma=params.sigma)
        if params.hard_residual_cutoff is not None:
            corr = _apply_cutoff(corr, params.hard_residual_cutoff)
        count = len(corr)
        if count < params.min_correspondences:
            break
        x = gauss_newton_step(corr)
        update = exp_twist(x)
        pose = update.compose(pose)
        stepped = True
        # Residual level after this update, on the same correspondence set.
        energy = point_to_plane_energy(
            Correspondences(update.transform(corr.p), corr.q, corr.n, corr.w))
        rot_norm, trans_norm = x.norms()
        if rot_norm < params.rotation_tolerance and trans_norm < params.translation_tolerance:
            converged = True
            break
    if not stepped:
        pose = init
    return pose, IcpDiagnostics(iterations, energy, count, converged)
