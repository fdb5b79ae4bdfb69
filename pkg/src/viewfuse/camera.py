"""Pinhole camera geometry: projection, unprojection, rays, view selection.

Poses are stored world-to-camera: a world point ``p`` maps into camera space
as ``R @ p + t``. Pixel coordinates are continuous, with pixel ``(i, j)``
centered at ``(i + 0.5, j + 0.5)``; ``u`` runs along columns (x), ``v`` along
rows (y). Invalid projections are marked with NaN rather than raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Camera-space depth at or below which a point counts as behind the camera.
Z_EPS = 1e-6

_ROT_TOL = 1e-6


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with a rigid world-to-camera pose.

    Attributes:
        fx, fy: focal lengths in pixels (> 0).
        cx, cy: principal point in pixels, inside the image.
        width, height: image size in pixels.
        rotation: (3, 3) world-to-camera rotation; orthonormal, det +1.
        translation: (3,) world-to-camera translation in meters.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point lies outside the image")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err >= _ROT_TOL:
            raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")
        if np.linalg.det(rot) < 0:
            raise ValueError("rotation is a reflection (det < 0)")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, -R^T t."""
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        """Optical-axis direction in world coordinates (camera +z)."""
        return np.array(self.rotation[2])

    @property
    def focal_mean(self) -> float:
        return 0.5 * (self.fx + self.fy)

    @property
    def shape(self) -> tuple[int, int]:
        """(height, width), matching raster array shapes."""
        return (self.height, self.width)

    def same_pose(self, other: "Camera") -> bool:
        """True when rotation and translation are bitwise identical."""
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )


@dataclass(frozen=True)
class Ray:
    """World-space ray with unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.array(self.origin, dtype=np.float64).reshape(3)
        d = np.array(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"ray direction must be unit length, |d| = {n:.8f}")
        o.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def point_at(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(np.asarray(t, dtype=np.float64), self.direction)


def project(points, cam: Camera):
    """Project world points into the image plane.

    Args:
        points: (..., 3) world coordinates in meters.
        cam: target camera.

    Returns:
        (u, v, z) arrays of shape (...). ``z`` is camera-space depth.
        Points at or behind the camera (z <= Z_EPS) have NaN pixel
        coordinates; callers must treat them as non-contributing.
    """
    pts = np.asarray(points, dtype=np.float64)
    pc = pts @ cam.rotation.T + cam.translation
    z = pc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * pc[..., 0] / z + cam.cx
        v = cam.fy * pc[..., 1] / z + cam.cy
    behind = ~(z > Z_EPS)
    if np.any(behind):
        u = np.where(behind, np.nan, u)
        v = np.where(behind, np.nan, v)
    return u, v, z


def unproject(u, v, depth, cam: Camera) -> np.ndarray:
    """Lift pixels with known camera-space depth to world points.

    Args:
        u, v: continuous pixel coordinates, shape (...).
        depth: camera-space depth in meters, > 0 and finite.

    Returns:
        (..., 3) world points.

    Raises:
        ValueError: for non-finite or non-positive depths.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise ValueError("unproject requires finite depth > 0")
    x = (u - cam.cx) / cam.fx * d
    y = (v - cam.cy) / cam.fy * d
    pc = np.stack(np.broadcast_arrays(x, y, d), axis=-1)
    return (pc - cam.translation) @ cam.rotation


def ray_for_pixel(cam: Camera, u: float, v: float) -> Ray:
    """Viewing ray through a pixel; origin is the camera center."""
    d_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    d_world = cam.rotation.T @ d_cam
    return Ray(origin=cam.center, direction=d_world / np.linalg.norm(d_world))


def pixel_ray_grid(cam: Camera):
    """Unit viewing rays for every pixel center.

    Returns:
        (origin, directions, axial): camera center (3,), unit world
        directions (H, W, 3), and the cosine between each direction and
        the optical axis (H, W). Camera depth along a ray of length t is
        ``t * axial``.
    """
    us = np.arange(cam.width, dtype=np.float64) + 0.5
    vs = np.arange(cam.height, dtype=np.float64) + 0.5
    x = (us[None, :] - cam.cx) / cam.fx
    y = (vs[:, None] - cam.cy) / cam.fy
    d_cam = np.stack(np.broadcast_arrays(x, y, np.ones_like(x + y)), axis=-1)
    d_world = d_cam @ cam.rotation  # row-vector form of R^T @ d
    norms = np.linalg.norm(d_world, axis=-1, keepdims=True)
    d_world = d_world / norms
    axial = 1.0 / norms[..., 0]  # unit d_cam z-component is 1 before normalizing
    return cam.center, d_world, axial


def select_nearest_views(
    cams: list[Camera],
    target: Camera,
    k: int,
    exclude_self: bool = False,
    strategy: str = "center",
) -> list[int]:
    """Indices of the k cameras nearest to the target.

    Distance is Euclidean between camera centers by default; the "angle"
    strategy ranks by angle between optical axes instead. Ties break
    toward the lower index, so the result is deterministic and invariant
    under permutation of the input list (up to index relabeling). With
    ``exclude_self``, cameras whose pose is bitwise identical to the
    target's are never returned.
    """
    candidates = []
    for i, c in enumerate(cams):
        if exclude_self and c.same_pose(target):
            continue
        if strategy == "center":
            key = float(np.linalg.norm(c.center - target.center))
        elif strategy == "angle":
            key = float(np.arccos(np.clip(c.forward @ target.forward, -1.0, 1.0)))
        else:
            raise ValueError(f"unknown view-selection strategy {strategy!r}")
        candidates.append((key, i))
    if k > len(candidates):
        raise ValueError(f"requested {k} views but only {len(candidates)} are available")
    candidates.sort()
    return [i for _, i in candidates[:k]]
