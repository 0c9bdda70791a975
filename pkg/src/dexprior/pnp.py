"""Pose-from-correspondences: estimate where the wrist sits in each camera frame.

Given 3D keypoints in the hand-model frame and their 2D pixel detections,
solve_pnp recovers the model-to-camera transform by a DLT linear
initialization followed by Levenberg-Marquardt on the reprojection
residuals.  solve_pnp_ransac wraps it with consensus sampling so sporadic
bad detections don't poison the fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, ConsensusFailureError, DegenerateError, NoConvergenceError
from .geometry import RigidTransform

DEPTH_FLOOR = 1e-9
GRAD_TOL = 1e-10
MAX_REFINE_ITERS = 100


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @staticmethod
    def from_dict(d: dict) -> "CameraIntrinsics":
        return CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


# Factory-calibrated values for the head-mounted action camera the source
# clips were shot on (1920x1080).
GOPRO = CameraIntrinsics(fx=2304.002572862, fy=2304.002572862, cx=960.0, cy=540.0)

PRESETS = {"gopro": GOPRO}


@dataclass(frozen=True)
class Correspondence:
    """A 3D model point (meters) paired with its 2D detection (pixels)."""

    model_point: tuple[float, float, float]
    image_point: tuple[float, float]


@dataclass(frozen=True)
class RansacParams:
    seed: int
    iterations: int = 200
    inlier_threshold: float = 8.0
    min_inliers: int = 6

    def __post_init__(self):
        if self.iterations < 1 or self.inlier_threshold <= 0 or self.min_inliers < 4:
            raise ValueError("invalid RANSAC parameters")


def project(point, pose: RigidTransform, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of one model point through pose into pixels."""
    p = pose.rotation @ np.asarray(point, dtype=float) + pose.translation
    if p[2] <= DEPTH_FLOOR:
        raise BehindCameraError(f"point depth {p[2]:.3e} is not in front of the camera")
    return np.array([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy])


def _unpack(corrs):
    model = np.array([c.model_point for c in corrs], dtype=float)
    image = np.array([c.image_point for c in corrs], dtype=float)
    if not np.all(np.isfinite(image)) or not np.all(np.isfinite(model)):
        raise ValueError("correspondences must be finite")
    return model, image


def _project_batch(model, rotation, translation, k):
    """Project all points; returns (pixels, depths) without raising."""
    cam = model @ rotation.T + translation
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * cam[:, 0] / z + k.cx
        v = k.fy * cam[:, 1] / z + k.cy
    return np.stack([u, v], axis=1), z


def _dlt(model, image, k) -> RigidTransform:
    """Direct linear transform on normalized image coordinates."""
    n = len(model)
    kinv = np.linalg.inv(k.matrix())
    norm = (np.column_stack([image, np.ones(n)]) @ kinv.T)[:, :2]
    a = np.zeros((2 * n, 12))
    x, y, z = model[:, 0], model[:, 1], model[:, 2]
    u, v = norm[:, 0], norm[:, 1]
    a[0::2, 0], a[0::2, 1], a[0::2, 2], a[0::2, 3] = x, y, z, 1.0
    a[0::2, 8], a[0::2, 9], a[0::2, 10], a[0::2, 11] = -u * x, -u * y, -u * z, -u
    a[1::2, 4], a[1::2, 5], a[1::2, 6], a[1::2, 7] = x, y, z, 1.0
    a[1::2, 8], a[1::2, 9], a[1::2, 10], a[1::2, 11] = -v * x, -v * y, -v * z, -v
    _, s, vt = np.linalg.svd(a)
    if s[-2] < 1e-10 * s[0]:
        raise DegenerateError("linear system is rank-deficient (degenerate geometry)")
    p = vt[-1].reshape(3, 4)
    r_raw = p[:, :3]
    uu, sv, vvt = np.linalg.svd(r_raw)
    scale = np.mean(sv)
    if scale < 1e-12:
        raise DegenerateError("linear solution has zero scale")
    rot = uu @ vvt
    sign = 1.0
    if np.linalg.det(rot) < 0:
        # the nullvector sign is arbitrary; this branch absorbs it entirely
        rot = -rot
        sign = -1.0
    t = sign * p[:, 3] / scale
    # cheirality: with the sign fixed, negative depths mean the linear
    # solution is geometric garbage, not a solvable ambiguity
    depths = model @ rot.T + t
    if np.median(depths[:, 2]) < 0:
        raise DegenerateError("linear solution places the scene behind the camera")
    return RigidTransform(rot, t, check=False)


def _skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0.0]])


def _rodrigues(w):
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + _skew(w)
    khat = _skew(w / theta)
    return np.eye(3) + np.sin(theta) * khat + (1 - np.cos(theta)) * (khat @ khat)


def _refine_lm(model, image, k, rot, t):
    """Levenberg-Marquardt on reprojection residuals.

    Pose increments are a left-applied rotation vector plus a translation
    step; the Jacobian is analytic.  Residuals are optimized in normalized
    camera coordinates (pixels divided by focal length) so the gradient
    tolerance is meaningful at machine precision; with fx = fy this has the
    same minimizer as the raw pixel objective.  The reported RMS is in
    pixels.
    """
    n = len(model)
    lam = 1e-3
    obs = np.stack([(image[:, 0] - k.cx) / k.fx, (image[:, 1] - k.cy) / k.fy], axis=1)

    def residuals(rm, tv):
        cam = model @ rm.T + tv
        z = cam[:, 2]
        if np.any(z <= DEPTH_FLOOR):
            return None
        proj = cam[:, :2] / z[:, None]
        return (proj - obs).reshape(-1)

    r = residuals(rot, t)
    if r is None:
        raise DegenerateError("initial pose places points behind the camera")
    cost = 0.5 * float(r @ r)
    for _ in range(MAX_REFINE_ITERS):
        cam = model @ rot.T + t
        x, y, zc = cam[:, 0], cam[:, 1], cam[:, 2]
        # d(u,v)/dp_cam rows, then chain through dp/d(omega, t)
        j = np.zeros((2 * n, 6))
        du = np.stack([1.0 / zc, np.zeros(n), -x / zc**2], axis=1)
        dv = np.stack([np.zeros(n), 1.0 / zc, -y / zc**2], axis=1)
        rx = model @ rot.T  # dp/domega = -skew(R X)
        for i in range(n):
            dp_dw = -_skew(rx[i])
            j[2 * i, :3] = du[i] @ dp_dw
            j[2 * i, 3:] = du[i]
            j[2 * i + 1, :3] = dv[i] @ dp_dw
            j[2 * i + 1, 3:] = dv[i]
        g = j.T @ r
        if np.max(np.abs(g)) <= GRAD_TOL:
            break
        jtj = j.T @ j
        stepped = False
        for _ in range(25):
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj)) + 1e-16 * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            rot_new = _rodrigues(delta[:3]) @ rot
            t_new = t + delta[3:]
            r_new = residuals(rot_new, t_new)
            if r_new is not None:
                cost_new = 0.5 * float(r_new @ r_new)
                if cost_new < cost:
                    rot, t, r, cost = rot_new, t_new, r_new, cost_new
                    lam = max(lam / 3, 1e-12)
                    stepped = True
                    break
            lam *= 10
        if not stepped and lam > 1e14:
            break
    else:
        raise NoConvergenceError(
            f"refinement hit {MAX_REFINE_ITERS} iterations without reaching the gradient tolerance"
        )
    if np.max(np.abs(g)) > GRAD_TOL:
        raise NoConvergenceError("refinement stalled before reaching the gradient tolerance")
    r2 = r.reshape(-1, 2)
    rms = math.sqrt(float(np.mean((r2[:, 0] * k.fx) ** 2 + (r2[:, 1] * k.fy) ** 2)))
    return RigidTransform(rot, t, check=False), rms


def solve_pnp(corrs, k: CameraIntrinsics, init: RigidTransform | None = None):
    """Recover the model-to-camera pose minimizing squared reprojection error.

    Returns (pose, reprojection_rms).  Needs at least 6 correspondences
    with distinct, non-degenerate model points.
    """
    if len(corrs) < 6:
        raise DegenerateError(f"need at least 6 correspondences, got {len(corrs)}")
    model, image = _unpack(corrs)
    if len(np.unique(model.round(decimals=12), axis=0)) < len(model):
        raise DegenerateError("model points must be distinct")
    if init is not None:
        rot, t = init.rotation, init.translation
    else:
        lin = _dlt(model, image, k)
        rot, t = lin.rotation, lin.translation
    return _refine_lm(model, image, k, rot, t)


def solve_pnp_ransac(corrs, k: CameraIntrinsics, params: RansacParams):
    """Consensus-robust pose fit; returns (pose, inlier_mask).

    The sampler draws from a canonical sort of the correspondences, not
    insertion order, so the result depends only on (set, seed).
    """
    n = len(corrs)
    model, image = _unpack(corrs)
    if n < params.min_inliers:
        raise ConsensusFailureError(f"{n} correspondences < min_inliers {params.min_inliers}")
    if n < 6:
        raise ConsensusFailureError(f"{n} correspondences cannot seed a 6-point hypothesis")
    order = np.lexsort(np.column_stack([model, image]).T[::-1])
    rng = np.random.default_rng(params.seed)

    best_count = 0
    best_err = np.inf
    best_mask = None
    for _ in range(params.iterations):
        pick = order[rng.choice(n, size=6, replace=False)]
        try:
            hyp = _dlt(model[pick], image[pick], k)
        except DegenerateError:
            continue
        pix, z = _project_batch(model, hyp.rotation, hyp.translation, k)
        err = np.linalg.norm(pix - image, axis=1)
        err[~np.isfinite(err) | (z <= DEPTH_FLOOR)] = np.inf
        mask = err <= params.inlier_threshold
        count = int(mask.sum())
        mean_err = float(err[mask].mean()) if count else np.inf
        if count > best_count or (count == best_count and mean_err < best_err):
            best_count, best_err, best_mask = count, mean_err, mask
    if best_count < params.min_inliers:
        raise ConsensusFailureError(
            f"best consensus {best_count} below min_inliers {params.min_inliers}"
        )
    if best_count < 6:
        # min_inliers may be set as low as 4, but refinement needs 6 points
        raise ConsensusFailureError(
            f"consensus of {best_count} is too small to refine a unique pose"
        )
    inlier_idx = np.flatnonzero(best_mask)
    pose, _ = solve_pnp([corrs[i] for i in inlier_idx], k)
    pix, z = _project_batch(model, pose.rotation, pose.translation, k)
    err = np.linalg.norm(pix - image, axis=1)
    err[~np.isfinite(err) | (z <= DEPTH_FLOOR)] = np.inf
    final_mask = err <= params.inlier_threshold
    return pose, final_mask
