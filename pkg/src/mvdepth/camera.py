"""Turntable camera rig and pinhole projection.

Conventions:
  * world is z-up; azimuth is measured counterclockwise from +x seen from
    above, elevation upward from the horizontal plane; both stored in degrees;
  * camera frame is x right, y down, z forward (so depth is camera z);
  * pixel centers sit at half-integer coordinates and the principal point
    is the exact image center (w/2, h/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, RadiusInsideScene
from .scene import BoundingSphere

DEFAULT_RADIUS_FACTOR = 2.5
DEFAULT_FOV_Y = 40.0


@dataclass(frozen=True)
class CameraRig:
    n_views: int = 60
    azimuth_step: float = 6.0
    elevation: float = 30.0
    radius: float | None = None
    look_at: tuple[float, float, float] | None = None
    fov_y: float = DEFAULT_FOV_Y
    radius_factor: float = DEFAULT_RADIUS_FACTOR

    def __post_init__(self):
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        if self.azimuth_step <= 0:
            raise ValueError("azimuth_step must be positive")
        if not 0.0 < self.elevation < 90.0:
            raise ValueError("elevation must lie in (0, 90) degrees")
        if not 0.0 < self.fov_y < 180.0:
            raise ValueError("fov_y must lie in (0, 180) degrees")
        if self.radius_factor <= 1.0:
            raise ValueError("radius_factor must exceed 1")


@dataclass(frozen=True, eq=False)
class CameraPose:
    azimuth: float
    elevation: float
    radius: float
    extrinsic: np.ndarray  # 4x4 world -> camera
    fov_y: float
    look_at: tuple[float, float, float]

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsic[:3, :3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.extrinsic[:3, 3]

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[2]

    def intrinsic(self, resolution: tuple[int, int]) -> np.ndarray:
        """Pixel-space intrinsics for a ``(width, height)`` image (square pixels)."""
        w, h = resolution
        f = (h / 2.0) / math.tan(math.radians(self.fov_y) / 2.0)
        return np.array([[f, 0.0, w / 2.0], [0.0, f, h / 2.0], [0.0, 0.0, 1.0]])

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.extrinsic[:3, 3]


def orbit_position(azimuth: float, elevation: float, radius: float, look_at) -> np.ndarray:
    az, el = math.radians(azimuth), math.radians(elevation)
    offset = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    return np.asarray(look_at, dtype=float) + radius * offset


def look_at_pose(
    azimuth: float,
    elevation: float,
    radius: float,
    look_at=(0.0, 0.0, 0.0),
    fov_y: float = DEFAULT_FOV_Y,
) -> CameraPose:
    """Pose on the orbit sphere around ``look_at``, aimed at it.

    Unlike :class:`CameraRig` this accepts any elevation strictly between
    -90 and 90 degrees (e.g. 0 for a camera on the horizontal axis).
    """
    if not -90.0 < elevation < 90.0:
        raise ValueError("elevation must lie in (-90, 90) degrees")
    if radius <= 0:
        raise ValueError("radius must be positive")
    target = np.asarray(look_at, dtype=float)
    eye = orbit_position(azimuth, elevation, radius, target)
    forward = target - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    ext = np.eye(4)
    ext[:3, :3] = rot
    ext[:3, 3] = -rot @ eye
    return CameraPose(float(azimuth), float(elevation), float(radius), ext, float(fov_y), tuple(map(float, target)))


def rig_radius(rig: CameraRig, sphere: BoundingSphere) -> float:
    radius = rig.radius if rig.radius is not None else rig.radius_factor * sphere.radius
    if radius <= sphere.radius:
        raise RadiusInsideScene(f"rig radius {radius:g} <= scene bounding radius {sphere.radius:g}")
    return float(radius)


def rig_poses(rig: CameraRig, scene_bound: BoundingSphere) -> list[CameraPose]:
    """All poses of the rig, ordered by view index (azimuth k * step)."""
    radius = rig_radius(rig, scene_bound)
    target = rig.look_at if rig.look_at is not None else scene_bound.center
    return [look_at_pose(k * rig.azimuth_step, rig.elevation, radius, target, rig.fov_y) for k in range(rig.n_views)]


def project(point, pose: CameraPose, resolution: tuple[int, int]) -> tuple[np.ndarray, float]:
    """Project a world point to ``(pixel, depth)``; raises :class:`BehindCamera`."""
    cam = pose.world_to_camera(np.asarray(point, dtype=float))
    depth = float(cam[2])
    if depth <= 0.0:
        raise BehindCamera(f"point {tuple(point)} has camera depth {depth:g}")
    k = pose.intrinsic(resolution)
    pix = (k @ (cam / depth))[:2]
    return pix, depth
