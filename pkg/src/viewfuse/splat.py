"""Forward warping of input views with per-pixel isotropic 3D Gaussians.

Each valid source pixel becomes one fully-opaque isotropic Gaussian whose
world-space scale is chosen so its projection back into the source image
covers a single pixel. Rendering into a target camera composites the splats
front-to-back with per-pixel transmittance, producing a color image, an
accumulated-opacity map, and an opacity-weighted depth map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, Z_EPS, project, unproject
from .raster import ALPHA, DEPTH, INVALID_DEPTH, ColorImage, ScalarMap

# Gaussian opacity is capped just below 1 so log-space transmittance stays finite.
_G_CAP = 1.0 - 1e-7
_QZ_BITS = 22
_IDX_BITS = 21
_PIX_BITS = 64 - _QZ_BITS - _IDX_BITS


@dataclass(frozen=True)
class Splat:
    """One isotropic Gaussian: world center, scale (sigma, meters), color."""

    center: np.ndarray
    radius: float
    color: np.ndarray
    opacity: float = 1.0


@dataclass
class SplatSet:
    """Column-major batch of splats from one source view.

    colors may have any channel count; RGB renders use (N, 3), mask
    renders (N, 1).
    """

    centers: np.ndarray  # (N, 3) float64
    radii: np.ndarray  # (N,) float64
    colors: np.ndarray  # (N, C) float32
    view_id: int | None = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        colors = np.asarray(self.colors, dtype=np.float32)
        if colors.ndim == 1:
            colors = colors[:, None]
        self.colors = colors
        n = len(self.centers)
        if len(self.radii) != n or len(self.colors) != n:
            raise ValueError("centers/radii/colors lengths differ")
        if np.any(self.radii <= 0) or not np.all(np.isfinite(self.centers)):
            raise ValueError("splats require positive radii and finite centers")

    def __len__(self) -> int:
        return len(self.centers)

    def __getitem__(self, i: int) -> Splat:
        return Splat(self.centers[i], float(self.radii[i]), self.colors[i])

    @classmethod
    def from_splats(cls, splats: list[Splat], view_id: int | None = None) -> "SplatSet":
        return cls(
            centers=np.array([s.center for s in splats], dtype=np.float64).reshape(-1, 3),
            radii=np.array([s.radius for s in splats], dtype=np.float64),
            colors=np.array([s.color for s in splats], dtype=np.float32),
            view_id=view_id,
        )


def gaussians_from_view(
    img, depth: ScalarMap, cam: Camera, pixel_scale: float = 0.5
) -> SplatSet:
    """One pixel-sized Gaussian per valid source pixel, in row-major order.

    The world-space sigma is depth / focal_mean * pixel_scale, so the
    +-1 sigma footprint spans one source pixel at the default
    pixel_scale of 0.5. Colors copy the underlying pixel values;
    invalid-depth pixels produce no splat.

    Args:
        img: ColorImage or (H, W, C) array supplying splat colors.
        depth: source depth map (invalid sentinel skipped).
        cam: source camera.

    Raises:
        ValueError: if image/depth/camera dimensions disagree.
    """
    colors = img.data if isinstance(img, ColorImage) else np.asarray(img, dtype=np.float32)
    if colors.ndim == 2:
        colors = colors[..., None]
    if colors.shape[:2] != depth.data.shape or depth.data.shape != cam.shape:
        raise ValueError("image, depth, and camera dimensions disagree")
    ys, xs = np.nonzero(depth.data > 0)
    d = depth.data[ys, xs].astype(np.float64)
    centers = unproject(xs + 0.5, ys + 0.5, d, cam)
    radii = d / cam.focal_mean * pixel_scale
    return SplatSet(centers=centers, radii=radii, colors=colors[ys, xs])


def _render_arrays(
    splats: SplatSet,
    target: Camera,
    sigma_cutoff: float = 3.0,
    alpha_min: float = 1e-4,
    max_radius_px: float = 24.0,
):
    """Composite splats into (image, alpha, depth) arrays.

    Splats are depth-sorted per pixel (ties broken by splat index) and
    blended front-to-back in log-transmittance space: contribution i gets
    weight T_i * g_i with T_i the product of (1 - g_j) over nearer splats.
    Contributions beyond the transmittance cutoff are negligible by
    construction (T < 1e-3 scales them below visibility), so compositing
    simply includes every surviving splat.
    """
    h, w = target.shape
    n_px = h * w
    channels = splats.colors.shape[1]
    image = np.zeros((h, w, channels), dtype=np.float64)
    alpha = np.zeros(n_px, dtype=np.float64)
    depth_num = np.zeros(n_px, dtype=np.float64)

    if len(splats) == 0:
        depth = np.zeros(n_px, dtype=np.float32)
        return image.astype(np.float32), alpha.astype(np.float32).reshape(h, w), depth.reshape(h, w)

    if n_px >= (1 << _PIX_BITS) or len(splats) >= (1 << _IDX_BITS):
        raise ValueError("render target or splat count exceeds the sort-key budget")

    u, v, z = project(splats.centers, target)
    ok = np.isfinite(u) & (z > Z_EPS)
    idx_all = np.flatnonzero(ok)
    u = u[idx_all]
    v = v[idx_all]
    z = z[idx_all]

    # 2-D footprint: isotropic small-angle approximation sigma * f / z,
    # floored at 1/3 px so the truncation radius never drops below one pixel.
    sigma2d = splats.radii[idx_all] * target.focal_mean / z
    sigma2d = np.clip(sigma2d, 1.0 / 3.0, max_radius_px / sigma_cutoff)
    r2d = sigma_cutoff * sigma2d
    r2d2 = r2d * r2d

    ix = np.floor(u).astype(np.int64)
    iy = np.floor(v).astype(np.int64)
    halfw = np.ceil(r2d - 0.5).astype(np.int64)

    zmax = float(z.max())
    qz = np.minimum((z / zmax * ((1 << _QZ_BITS) - 1)).astype(np.uint64), (1 << _QZ_BITS) - 1)

    key_parts = []
    gid_parts = []
    g_parts = []
    u32 = u.astype(np.float32)
    v32 = v.astype(np.float32)
    inv_two_sig2 = (0.5 / (sigma2d * sigma2d)).astype(np.float32)
    r2d2_32 = r2d2.astype(np.float32)
    for hw in np.unique(halfw):
        sel = np.flatnonzero(halfw == hw)
        offs = np.arange(-hw, hw + 1, dtype=np.int64)
        dxs, dys = np.meshgrid(offs, offs)
        dxs = dxs.reshape(-1, 1)
        dys = dys.reshape(-1, 1)
        px = ix[sel][None, :] + dxs  # (n_offsets, n_splats)
        py = iy[sel][None, :] + dys
        du = (px + np.float32(0.5)) - u32[sel][None, :]
        dv = (py + np.float32(0.5)) - v32[sel][None, :]
        d2 = (du * du + dv * dv).astype(np.float32)
        keep = (d2 <= r2d2_32[sel][None, :]) & (px >= 0) & (px < w) & (py >= 0) & (py < h)
        flat = np.flatnonzero(keep.reshape(-1))
        if flat.size == 0:
            continue
        col = flat % len(sel)  # splat index within sel
        ksel = sel[col]
        orig = idx_all[ksel]
        pix = (py.reshape(-1)[flat] * w + px.reshape(-1)[flat]).astype(np.uint64)
        key = (
            (pix << np.uint64(_QZ_BITS + _IDX_BITS))
            | (qz[ksel] << np.uint64(_IDX_BITS))
            | orig.astype(np.uint64)
        )
        g = np.exp(-d2.reshape(-1)[flat] * inv_two_sig2[ksel])
        key_parts.append(key)
        gid_parts.append(orig)
        g_parts.append(g.astype(np.float64))

    if not key_parts:
        depth = np.zeros(n_px, dtype=np.float32)
        return image.astype(np.float32), alpha.astype(np.float32).reshape(h, w), depth.reshape(h, w)

    keys = np.concatenate(key_parts)
    gids = np.concatenate(gid_parts)
    gs = np.concatenate(g_parts)

    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    gids = gids[order]
    gs = np.minimum(gs[order], _G_CAP)

    pix = (keys >> np.uint64(_QZ_BITS + _IDX_BITS)).astype(np.int64)
    logs = np.log1p(-gs)
    cum = np.cumsum(logs)
    prev_cum = np.concatenate(([0.0], cum[:-1]))
    seg_start = np.empty(len(pix), dtype=bool)
    seg_start[0] = True
    seg_start[1:] = pix[1:] != pix[:-1]
    seg_id = np.cumsum(seg_start) - 1
    base = prev_cum[seg_start][seg_id]
    trans = np.exp(prev_cum - base)
    wgt = trans * gs

    alpha = 1.0 - np.exp(np.bincount(pix, weights=logs, minlength=n_px))
    colors = np.asarray(splats.colors, dtype=np.float64)
    flat_image = np.empty((n_px, channels), dtype=np.float64)
    for c in range(channels):
        flat_image[:, c] = np.bincount(pix, weights=wgt * colors[gids, c], minlength=n_px)
    z_all = np.zeros(len(splats), dtype=np.float64)
    z_all[idx_all] = z
    depth_num = np.bincount(pix, weights=wgt * z_all[gids], minlength=n_px)

    covered = alpha > alpha_min
    depth = np.where(covered, depth_num / np.maximum(alpha, 1e-300), INVALID_DEPTH)
    return (
        flat_image.reshape(h, w, channels).astype(np.float32),
        alpha.astype(np.float32).reshape(h, w),
        depth.astype(np.float32).reshape(h, w),
    )


def render_splats(splats: SplatSet, target: Camera, **kwargs):
    """Render a splat set into a target camera.

    Returns:
        (image, alpha, depth): ColorImage (or raw array for non-RGB
        channel counts), accumulated-opacity ScalarMap in [0, 1], and an
        opacity-weighted composite depth ScalarMap (invalid where
        accumulated opacity <= 1e-4). Deterministic: per-pixel splat order
        is (depth, splat index).
    """
    img, alpha, depth = _render_arrays(splats, target, **kwargs)
    out = ColorImage(img) if img.shape[2] == 3 else img
    return out, ScalarMap(alpha, kind=ALPHA), ScalarMap(depth, kind=DEPTH)
