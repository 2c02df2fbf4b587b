"""Pinhole geometry: unprojection, point-splat rendering and video warping.

Conventions: pixel (u, v) = (column, row), camera looks down +z, image y
axis points down. Depth is camera-space z and must be positive. Poses are
world-to-camera rigid transforms relative to the source camera; pose 0 is
always the identity (the source view anchors the trajectory).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

EPS_Z = 1e-6       # behind-camera culling threshold, scene units
ORTHO_TOL = 1e-9

TRAJECTORY_KINDS = (
    "zoom_in", "zoom_out", "arc_left", "arc_right", "pan_up", "pan_down",
)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray       # 3x3, orthonormal, det +1
    translation: np.ndarray    # 3-vector

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise GeometryError("rotation must be 3x3")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise GeometryError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self ∘ other)(p) = self(other(p))."""
        r = self.rotation @ other.rotation
        # re-orthonormalize drift so long chains stay valid
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
        return RigidTransform(r, self.rotation @ other.translation
                              + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T,
                              -self.rotation.T @ self.translation)


@dataclass(frozen=True)
class CameraTrajectory:
    intrinsics: CameraIntrinsics
    poses: list[RigidTransform] = field(default_factory=list)

    def __post_init__(self):
        if not self.poses:
            raise GeometryError("trajectory needs at least one pose")
        p0 = self.poses[0]
        if (np.max(np.abs(p0.rotation - np.eye(3))) > ORTHO_TOL
                or np.max(np.abs(p0.translation)) > ORTHO_TOL):
            raise GeometryError("pose 0 must be the identity transform")

    def __len__(self) -> int:
        return len(self.poses)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray   # (N, 3)
    colors: np.ndarray   # (N, 3)

    def __post_init__(self):
        if len(self.points) != len(self.colors):
            raise GeometryError("points and colors must have equal length")


def _rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def make_trajectory(kind: str, magnitude: float, frames: int,
                    intrinsics: CameraIntrinsics,
                    pivot_depth: float = 1.0) -> CameraTrajectory:
    """Build a trajectory interpolating linearly from identity to full motion.

    Zooms translate along the optical axis (zoom_in moves the camera toward
    the scene, so points at depth d end up at depth d - magnitude at the last
    frame). Arcs rotate about a vertical axis through the pivot point
    (0, 0, pivot_depth); magnitude is the full arc angle in radians. Pans
    translate the camera laterally by magnitude scene units (pan_up moves the
    camera toward -y, i.e. upward in image coordinates).
    """
    if frames < 1:
        raise GeometryError("frame count must be >= 1")
    if kind not in TRAJECTORY_KINDS:
        raise GeometryError(f"unknown trajectory kind: {kind!r}")
    if magnitude < 0:
        raise GeometryError("magnitude must be >= 0")
    poses = []
    for i in range(frames):
        s = i / (frames - 1) if frames > 1 else 0.0
        a = s * magnitude
        if kind == "zoom_in":
            pose = RigidTransform(np.eye(3), np.array([0.0, 0.0, -a]))
        elif kind == "zoom_out":
            pose = RigidTransform(np.eye(3), np.array([0.0, 0.0, a]))
        elif kind in ("arc_left", "arc_right"):
            theta = a if kind == "arc_left" else -a
            r = _rot_y(theta)
            pivot = np.array([0.0, 0.0, pivot_depth])
            pose = RigidTransform(r, pivot - r @ pivot)
        elif kind == "pan_up":
            pose = RigidTransform(np.eye(3), np.array([0.0, a, 0.0]))
        else:  # pan_down
            pose = RigidTransform(np.eye(3), np.array([0.0, -a, 0.0]))
        poses.append(pose)
    return CameraTrajectory(intrinsics, poses)


def unproject(frame: np.ndarray, depth: np.ndarray,
              intrinsics: CameraIntrinsics) -> PointCloud:
    """Back-project every pixel to 3D using its depth; one point per pixel."""
    frame = np.asarray(frame, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if frame.shape[:2] != depth.shape:
        raise GeometryError("frame and depth grids disagree")
    if np.any(depth <= 0):
        raise GeometryError("depth values must be positive")
    h, w = depth.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    x = (u - intrinsics.cx) / intrinsics.fx * depth
    y = (v - intrinsics.cy) / intrinsics.fy * depth
    points = np.stack([x.ravel(), y.ravel(), depth.ravel()], axis=1)
    return PointCloud(points, frame.reshape(-1, 3))


def project_zbuffer(cloud: PointCloud, transform: RigidTransform,
                    intrinsics: CameraIntrinsics, height: int, width: int,
                    return_depth: bool = False):
    """Transform, project and splat a point cloud with z-buffering.

    Each point splats to its nearest integer pixel; per pixel the point with
    the smallest camera-space z wins. Pixels receiving no point get mask 0
    and color 0. Points with transformed z <= EPS_Z are culled.
    """
    if len(cloud.points) == 0:
        raise GeometryError("point cloud is empty")
    pts = transform.apply(cloud.points)
    z = pts[:, 2]
    keep = z > EPS_Z
    frame = np.zeros((height, width, 3))
    mask = np.zeros((height, width))
    zbuf = np.full((height, width), np.inf)
    if np.any(keep):
        pts, z = pts[keep], z[keep]
        colors = cloud.colors[keep]
        u = np.rint(intrinsics.fx * pts[:, 0] / z + intrinsics.cx).astype(int)
        v = np.rint(intrinsics.fy * pts[:, 1] / z + intrinsics.cy).astype(int)
        inb = (u >= 0) & (u < width) & (v >= 0) & (v < height)
        u, v, z, colors = u[inb], v[inb], z[inb], colors[inb]
        # far-to-near stable order: the nearest point is written last and wins
        order = np.argsort(-z, kind="stable")
        fv, fu, fz = v[order], u[order], z[order]
        frame[fv, fu] = colors[order]
        mask[fv, fu] = 1.0
        zbuf[fv, fu] = fz
    if return_depth:
        return frame, mask, zbuf
    return frame, mask


def warp_video(video: np.ndarray, depth: np.ndarray,
               traj: CameraTrajectory):
    """Warp a video along a trajectory; returns (measurement y, mask m).

    Per frame i the source pixels are unprojected with their depth and
    re-rendered under pose i. Holes carry color 0, so y = m * y always.
    """
    video = np.asarray(video, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    frames, height, width = video.shape[:3]
    if len(traj) != frames or depth.shape[0] != frames:
        raise GeometryError("video, depth and trajectory frame counts differ")
    y = np.zeros_like(video)
    m = np.zeros((frames, height, width))
    for i in range(frames):
        cloud = unproject(video[i], depth[i], traj.intrinsics)
        y[i], m[i] = project_zbuffer(cloud, traj.poses[i], traj.intrinsics,
                                     height, width)
    return y, m


def double_reproject(video: np.ndarray, depth: np.ndarray,
                     traj: CameraTrajectory):
    """Warp forward along the trajectory, then back to the source camera.

    The forward pass renders a depth image with the same z-buffer; the valid
    target pixels are unprojected from it and warped back with the inverse
    pose. The result (xm, m) is pixel-aligned with the input: m marks pixels
    that survived the roundtrip and xm is zero elsewhere.
    """
    video = np.asarray(video, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    frames, height, width = video.shape[:3]
    if len(traj) != frames or depth.shape[0] != frames:
        raise GeometryError("video, depth and trajectory frame counts differ")
    xm = np.zeros_like(video)
    m = np.zeros((frames, height, width))
    for i in range(frames):
        cloud = unproject(video[i], depth[i], traj.intrinsics)
        fwd, fwd_mask, fwd_depth = project_zbuffer(
            cloud, traj.poses[i], traj.intrinsics, height, width,
            return_depth=True)
        valid = fwd_mask > 0
        if not np.any(valid):
            continue
        vv, uu = np.nonzero(valid)
        d = fwd_depth[vv, uu]
        x3 = (uu - traj.intrinsics.cx) / traj.intrinsics.fx * d
        y3 = (vv - traj.intrinsics.cy) / traj.intrinsics.fy * d
        back_cloud = PointCloud(np.stack([x3, y3, d], axis=1), fwd[vv, uu])
        xm[i], m[i] = project_zbuffer(back_cloud, traj.poses[i].inverse(),
                                      traj.intrinsics, height, width)
    return xm, m


# -- trajectory files -------------------------------------------------------

def load_trajectory(path: str) -> CameraTrajectory:
    """Load a trajectory JSON: either parametric or an explicit pose list."""
    with open(path) as fh:
        spec = json.load(fh)
    return trajectory_from_dict(spec)


def trajectory_from_dict(spec: dict) -> CameraTrajectory:
    ki = spec["intrinsics"]
    intr = CameraIntrinsics(ki["fx"], ki["fy"], ki["cx"], ki["cy"])
    if "poses" in spec:
        poses = [
            RigidTransform(np.asarray(p["rotation"]).reshape(3, 3),
                           np.asarray(p["translation"]))
            for p in spec["poses"]
        ]
        return CameraTrajectory(intr, poses)
    return make_trajectory(spec["kind"], spec["magnitude"], spec["frames"],
                           intr, pivot_depth=spec.get("pivot_depth", 1.0))


def save_trajectory(path: str, traj: CameraTrajectory) -> None:
    spec = {
        "intrinsics": {
            "fx": traj.intrinsics.fx, "fy": traj.intrinsics.fy,
            "cx": traj.intrinsics.cx, "cy": traj.intrinsics.cy,
        },
        "poses": [
            {"rotation": p.rotation.ravel().tolist(),
             "translation": p.translation.tolist()}
            for p in traj.poses
        ],
    }
    with open(path, "w") as fh:
        json.dump(spec, fh, indent=2)
