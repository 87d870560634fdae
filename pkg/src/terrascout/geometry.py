"""Camera model, projection, and frustum tests (z-up world)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass
class CameraState:
    position: np.ndarray           # (3,) meters
    direction: np.ndarray          # (3,) unit view direction
    fov_y: float                   # radians
    viewport: tuple[int, int]      # pixels (w, h)
    near: float = 1.0
    far: float = 1.0e6

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("zero view direction")
        self.direction = d / n
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if not 0 < self.fov_y < np.pi:
            raise ValueError("fov outside (0, pi)")

    def basis(self):
        fwd = self.direction
        up_hint = WORLD_UP if abs(fwd @ WORLD_UP) < 0.999 else \
            np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, up_hint)
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return right, up, fwd

    @classmethod
    def from_yaw_pitch(cls, position, yaw: float, pitch: float,
                       fov_y: float, viewport, near=1.0, far=1.0e6):
        """yaw: radians CCW from +x in the xy plane; pitch: radians up."""
        cp = np.cos(pitch)
        direction = np.array([np.cos(yaw) * cp, np.sin(yaw) * cp,
                              np.sin(pitch)])
        return cls(position=np.asarray(position, float),
                   direction=direction, fov_y=fov_y,
                   viewport=tuple(viewport), near=near, far=far)


def fit_overview(bbox_min, bbox_max, viewport,
                 fov_y: float = np.deg2rad(60)) -> CameraState:
    """Top-down camera high enough that the whole bbox is in view."""
    bbox_min = np.asarray(bbox_min, float)
    bbox_max = np.asarray(bbox_max, float)
    center = (bbox_min + bbox_max) / 2
    extent = bbox_max - bbox_min
    w, h = viewport
    aspect = w / h
    half_y = max(extent[1], extent[0] / aspect) / 2
    dist = half_y / np.tan(fov_y / 2) * 1.15 + extent[2]
    pos = center + np.array([0.0, 0.0, dist])
    return CameraState(position=pos, direction=np.array([0.0, 0.0, -1.0]),
                       fov_y=fov_y, viewport=tuple(viewport),
                       near=max(dist * 1e-4, 0.1), far=dist * 10 + 1)


def eye_coords(cam: CameraState, points: np.ndarray):
    """(N,3) world points -> (x_eye, y_eye, depth); depth > 0 in front."""
    right, up, fwd = cam.basis()
    d = np.atleast_2d(points) - cam.position
    return d @ right, d @ up, d @ fwd


def project(cam: CameraState, points: np.ndarray):
    """Project to pixel coordinates.

    Returns (px, py, depth); callers must mask depth <= near themselves
    (projection of behind-camera points is meaningless).
    """
    xe, ye, ze = eye_coords(cam, points)
    w, h = cam.viewport
    f = 1.0 / np.tan(cam.fov_y / 2)
    aspect = w / h
    with np.errstate(divide="ignore", invalid="ignore"):
        ndc_x = xe * (f / aspect) / ze
        ndc_y = ye * f / ze
    px = (ndc_x * 0.5 + 0.5) * w
    py = (0.5 - ndc_y * 0.5) * h
    return px, py, ze


def depth_key(cam: CameraState, depth: np.ndarray) -> np.ndarray:
    """Monotone u32 encoding of eye-space depth via reciprocal mapping."""
    inv_n = 1.0 / cam.near
    inv_f = 1.0 / cam.far
    z = np.clip(depth, cam.near, cam.far)
    norm = (inv_n - 1.0 / z) / (inv_n - inv_f)
    return (norm * np.float64(0xFFFFFFFE)).astype(np.uint64)


def frustum_planes(cam: CameraState) -> np.ndarray:
    """Six inward-facing planes as rows (nx, ny, nz, d): n.p + d >= 0."""
    right, up, fwd = cam.basis()
    w, h = cam.viewport
    f = 1.0 / np.tan(cam.fov_y / 2)
    aspect = w / h
    ty = 1.0 / f
    tx = aspect / f
    planes = []

    def plane(normal, point):
        normal = normal / np.linalg.norm(normal)
        planes.append(np.append(normal, -normal @ point))

    plane(fwd, cam.position + fwd * cam.near)
    plane(-fwd, cam.position + fwd * cam.far)
    plane(fwd * tx - right, cam.position)   # right side
    plane(fwd * tx + right, cam.position)   # left side
    plane(fwd * ty - up, cam.position)      # top
    plane(fwd * ty + up, cam.position)      # bottom
    return np.array(planes)


def aabb_outside_frustum(planes: np.ndarray, bbox_min,
                         bbox_max) -> bool:
    """True when the box is certainly outside (all corners behind a plane)."""
    bbox_min = np.asarray(bbox_min, float)
    bbox_max = np.asarray(bbox_max, float)
    corners = np.stack(np.meshgrid(
        [bbox_min[0], bbox_max[0]], [bbox_min[1], bbox_max[1]],
        [bbox_min[2], bbox_max[2]], indexing="ij"), axis=-1).reshape(8, 3)
    for p in planes:
        if np.all(corners @ p[:3] + p[3] < 0):
            return True
    return False


def projected_bbox_area(cam: CameraState, bbox_min, bbox_max):
    """Screen-space AABB area (px^2) of the box, 0 if outside the frustum.

    Corners behind the near plane are clamped onto it, which keeps the
    area finite and monotone as the camera approaches.
    """
    if aabb_outside_frustum(frustum_planes(cam), bbox_min, bbox_max):
        return 0.0, 0.0
    corners = np.stack(np.meshgrid(
        [bbox_min[0], bbox_max[0]], [bbox_min[1], bbox_max[1]],
        [bbox_min[2], bbox_max[2]], indexing="ij"), axis=-1).reshape(8, 3)
    xe, ye, ze = eye_coords(cam, corners)
    ze = np.maximum(ze, cam.near)
    w, h = cam.viewport
    f = 1.0 / np.tan(cam.fov_y / 2)
    aspect = w / h
    px = (xe * (f / aspect) / ze * 0.5 + 0.5) * w
    py = (0.5 - ye * f / ze * 0.5) * h
    width = px.max() - px.min()
    height = py.max() - py.min()
    area = width * height
    diag = float(np.hypot(width, height))
    return float(area), diag
