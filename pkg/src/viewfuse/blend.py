"""Depth-guided blending of forward-rendered views into the final image.

A deterministic weighting rule stands in for a learned weight predictor: it
consumes the same per-view feature set (rendered color/depth/alpha, ray-normal
and ray-ray angles, camera distances, view-direction agreement, plus the fused
novel-view depth) and favors views whose rendered depth agrees with the fused
depth. Any callable mapping BlendFeatures to BlendWeights can slot in instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .camera import Camera, pixel_ray_grid, unproject
from .raster import MASK, ColorImage, ScalarMap, normals_from_depth


@dataclass
class ViewRender:
    """Output of rendering one input view into the target camera."""

    image: ColorImage
    alpha: ScalarMap
    depth: ScalarMap


@dataclass
class BlendFeatures:
    """Per-view, per-pixel blending features plus the shared fused depth.

    images: (K, H, W, 3) rendered colors.
    depths: (K, H, W) rendered depths (0 = invalid).
    alphas: (K, H, W) accumulated opacities.
    ray_normal_dot: (K, H, W) input-view ray direction vs fused-depth normal.
    ray_ray_dot: (K, H, W) input-view ray vs target ray.
    cam_distance: (K,) input-to-target camera distances in meters.
    view_dir_dot: (K,) input vs target optical-axis agreement.
    tsdf_depth: (H, W) fused novel-view depth (0 = invalid).
    """

    images: np.ndarray
    depths: np.ndarray
    alphas: np.ndarray
    ray_normal_dot: np.ndarray
    ray_ray_dot: np.ndarray
    cam_distance: np.ndarray
    view_dir_dot: np.ndarray
    tsdf_depth: np.ndarray

    def as_tensor(self) -> np.ndarray:
        """Stack into the (9K + 1, H, W) layout a learned provider expects."""
        k, h, w = self.depths.shape
        spatial7 = np.broadcast_to(self.cam_distance[:, None, None], (k, h, w))
        spatial8 = np.broadcast_to(self.view_dir_dot[:, None, None], (k, h, w))
        parts = [
            self.images.transpose(0, 3, 1, 2).reshape(3 * k, h, w),
            self.depths,
            self.alphas,
            self.ray_normal_dot,
            self.ray_ray_dot,
            spatial7,
            spatial8,
            self.tsdf_depth[None],
        ]
        return np.concatenate(parts, axis=0)


@dataclass
class BlendWeights:
    """Per-view weights, background weight, and background fill image."""

    view_weights: np.ndarray  # (K, H, W) in [0, 1]
    w_bg: np.ndarray  # (H, W) in [0, 1]
    background: ColorImage


WeightProvider = Callable[[BlendFeatures], BlendWeights]


def compute_features(
    renders: list[ViewRender],
    target: Camera,
    tsdf_depth: ScalarMap,
    src_cams: list[Camera],
) -> BlendFeatures:
    """Assemble the blending feature set from renders and fused depth.

    Angle features are evaluated at the fused-depth surface point of each
    target pixel; pixels without fused depth get 0 there. Per-camera
    scalars (distance, axis agreement) broadcast spatially on demand.
    """
    h, w = target.shape
    k = len(renders)
    for r in renders:
        if r.image.data.shape[:2] != (h, w):
            raise ValueError("render dimensions do not match the target camera")

    images = np.stack([r.image.data for r in renders])
    depths = np.stack([r.depth.data for r in renders])
    alphas = np.stack([r.alpha.data for r in renders])

    dvalid = tsdf_depth.data > 0
    d_safe = np.where(dvalid, tsdf_depth.data, 1.0).astype(np.float64)
    us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    surf = unproject(us, vs, d_safe, target)

    normals = normals_from_depth(tsdf_depth, target).data.astype(np.float64)
    _, tdirs, _ = pixel_ray_grid(target)

    ray_normal = np.zeros((k, h, w), dtype=np.float32)
    ray_ray = np.zeros((k, h, w), dtype=np.float32)
    cam_dist = np.zeros(k, dtype=np.float32)
    axis_dot = np.zeros(k, dtype=np.float32)
    for i, cam in enumerate(src_cams):
        rays = surf - cam.center
        rays /= np.maximum(np.linalg.norm(rays, axis=-1, keepdims=True), 1e-12)
        rn = np.sum(rays * normals, axis=-1)
        ray_normal[i] = np.where(dvalid & np.isfinite(rn), rn, 0.0)
        rr = np.sum(rays * tdirs, axis=-1)
        ray_ray[i] = np.where(dvalid, rr, 0.0)
        cam_dist[i] = np.linalg.norm(cam.center - target.center)
        axis_dot[i] = float(cam.forward @ target.forward)

    return BlendFeatures(
        images=images,
        depths=depths,
        alphas=alphas,
        ray_normal_dot=ray_normal,
        ray_ray_dot=ray_ray,
        cam_distance=cam_dist,
        view_dir_dot=axis_dot,
        tsdf_depth=tsdf_depth.data.copy(),
    )


def _nearest_fill(image: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Fill invalid pixels with their nearest valid pixel's color."""
    if not valid.any():
        return np.zeros_like(image)
    if valid.all():
        return image.copy()
    _, (iy, ix) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return image[iy, ix]


def _finalize_weights(raw: np.ndarray, feat: BlendFeatures) -> BlendWeights:
    """Normalize weights, derive the background weight and fill image."""
    wmax = raw.max(axis=0)
    view_w = np.where(wmax > 0, raw / np.maximum(wmax, 1e-30), 0.0).astype(np.float32)
    coverage = np.sum(feat.alphas * view_w, axis=0)
    w_bg = np.clip(1.0 - coverage, 0.0, 1.0).astype(np.float32)

    den = (feat.alphas * view_w).sum(axis=0)
    num = np.einsum("khw,khwc->hwc", view_w, feat.images)
    ok = den > 1e-6
    fg = np.where(ok[..., None], num / np.maximum(den, 1e-30)[..., None], 0.0)
    background = ColorImage(_nearest_fill(fg, ok))
    return BlendWeights(view_weights=view_w, w_bg=w_bg, background=background)


def heuristic_weights(
    feat: BlendFeatures, sigma_d: float = 0.04, gamma_angle: float = 2.0
) -> BlendWeights:
    """Geometry-guided weights: agree with the fused depth, face the target.

    w_k is exp(-|D_k - D|/sigma_d) * max(ray_ray_dot, 0)^gamma * alpha_k,
    normalized so the per-pixel maximum is 1. Views or pixels without a
    usable depth pair skip the depth factor. The background weight is the
    uncovered remainder and the background image is a nearest-valid fill
    of the foreground blend.
    """
    if not sigma_d > 0:
        raise ValueError("sigma_d must be positive")
    dvalid = (feat.tsdf_depth > 0)[None] & (feat.depths > 0)
    ddiff = np.abs(feat.depths - feat.tsdf_depth[None])
    depth_factor = np.where(dvalid, np.exp(-ddiff / sigma_d), 1.0)
    angle = np.maximum(feat.ray_ray_dot, 0.0)
    angle_factor = np.where((feat.tsdf_depth > 0)[None], angle**gamma_angle, 1.0)
    raw = depth_factor * angle_factor * feat.alphas
    return _finalize_weights(raw, feat)


def uniform_weights(feat: BlendFeatures) -> BlendWeights:
    """Equal weight to every covering view."""
    k, h, w = feat.depths.shape
    return _finalize_weights(np.ones((k, h, w)), feat)


def distance_weights(feat: BlendFeatures) -> BlendWeights:
    """Inverse camera-distance weighting, constant per view."""
    inv = 1.0 / np.maximum(feat.cam_distance.astype(np.float64), 1e-6)
    k, h, w = feat.depths.shape
    raw = np.broadcast_to(inv[:, None, None], (k, h, w)).copy()
    return _finalize_weights(raw, feat)


def blend_foreground(renders: list[ViewRender], weights: BlendWeights):
    """Normalized alpha- and weight-blended foreground.

    Rendered images are coverage-premultiplied (sum of T * g * color), so
    each view's visible color is image / alpha; weighting visible colors
    by alpha * w and normalizing reduces to sum(w * image) / sum(alpha * w).

    Returns:
        (image, holes): the blend and a mask of pixels whose combined
        alpha-weight denominator fell below 1e-6 (true disocclusions).
    """
    images = np.stack([r.image.data for r in renders]).astype(np.float64)
    alphas = np.stack([r.alpha.data for r in renders]).astype(np.float64)
    den = (alphas * weights.view_weights).sum(axis=0)
    num = np.einsum("khw,khwc->hwc", weights.view_weights, images)
    ok = den > 1e-6
    out = np.where(ok[..., None], num / np.maximum(den, 1e-30)[..., None], 0.0)
    holes = (~ok).astype(np.float32)
    return ColorImage(out), ScalarMap(holes, kind=MASK)


def composite_background(
    fg: ColorImage, holes: ScalarMap, weights: BlendWeights
) -> ColorImage:
    """Final lerp toward the background; holes take the background outright."""
    w_bg = np.where(holes.data > 0, 1.0, weights.w_bg)[..., None]
    out = (1.0 - w_bg) * fg.data + w_bg * weights.background.data
    return ColorImage(out)


def depth_blend_residual(
    weights: BlendWeights, renders: list[ViewRender], tsdf_depth: ScalarMap
) -> float:
    """Mean |fused depth - weight-blended rendered depth| in meters.

    Diagnostic counterpart of the depth-reconstruction objective; averaged
    over pixels where both sides are defined.
    """
    depths = np.stack([r.depth.data for r in renders]).astype(np.float64)
    alphas = np.stack([r.alpha.data for r in renders]).astype(np.float64)
    aw = alphas * weights.view_weights * (depths > 0)
    den = aw.sum(axis=0)
    num = np.sum(aw * depths, axis=0)
    ok = (den > 1e-6) & (tsdf_depth.data > 0)
    if not ok.any():
        return 0.0
    blended = num[ok] / den[ok]
    return float(np.mean(np.abs(tsdf_depth.data[ok] - blended)))
