"""Dense raster containers and resampling kernels.

Rasters are float32 numpy arrays in row-major (H, W[, C]) layout. Depth maps
use 0.0 as the invalid-pixel sentinel; no valid depth is <= 0. Sampling
functions return NaN markers (never raise) for out-of-bounds coordinates and
for interpolations that touch invalid depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera

INVALID_DEPTH = 0.0

DEPTH = "depth"
MASK = "mask"
WEIGHT = "weight"
ALPHA = "alpha"
_KINDS = (DEPTH, MASK, WEIGHT, ALPHA)


@dataclass
class ScalarMap:
    """Single-channel raster with a semantics tag.

    Kinds: "depth" (meters, 0.0 = invalid sentinel), "mask"/"alpha"
    (unitless in [0, 1]), "weight" (unitless >= 0). Values are sanitized
    to the kind's range on construction.
    """

    data: np.ndarray
    kind: str = DEPTH

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown scalar-map kind {self.kind!r}")
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"scalar map must be 2-D, got shape {arr.shape}")
        if self.kind == DEPTH:
            arr = np.where(np.isfinite(arr) & (arr > 0), arr, np.float32(INVALID_DEPTH))
        elif self.kind in (MASK, ALPHA):
            arr = np.clip(np.nan_to_num(arr, nan=0.0), 0.0, 1.0)
        else:
            arr = np.maximum(np.nan_to_num(arr, nan=0.0), 0.0)
        self.data = np.ascontiguousarray(arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def valid_mask(self) -> np.ndarray:
        """Boolean validity; all-true for non-depth kinds."""
        if self.kind == DEPTH:
            return self.data > 0
        return np.ones(self.data.shape, dtype=bool)


@dataclass
class ColorImage:
    """RGB raster with channels in [0, 1]; clamped on construction."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"color image must be (H, W, 3), got shape {arr.shape}")
        self.data = np.ascontiguousarray(np.clip(np.nan_to_num(arr, nan=0.0), 0.0, 1.0))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass
class NormalMap:
    """Per-pixel unit normals in world space; invalid pixels are NaN."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"normal map must be (H, W, 3), got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)

    def valid_mask(self) -> np.ndarray:
        return np.all(np.isfinite(self.data), axis=-1)


def _unwrap(raster):
    """(array, is_depth) for a ScalarMap/ColorImage/NormalMap or raw array."""
    if isinstance(raster, ScalarMap):
        return raster.data, raster.kind == DEPTH
    if isinstance(raster, (ColorImage, NormalMap)):
        return raster.data, False
    return np.asarray(raster), False


def _rewrap(raster, data):
    if isinstance(raster, ScalarMap):
        return ScalarMap(data, kind=raster.kind)
    if isinstance(raster, ColorImage):
        return ColorImage(data)
    return data


def sample_bilinear(raster, u, v):
    """Bilinearly sample a raster at continuous pixel coordinates.

    Coordinates outside [0, W] x [0, H] yield NaN. For depth maps, any
    interpolation corner that is the invalid sentinel and carries nonzero
    weight also yields NaN; sampling exactly at a valid pixel center
    returns the stored value even next to invalid pixels.

    Args:
        raster: ScalarMap, ColorImage, or (H, W[, C]) array.
        u, v: pixel coordinates, any matching shapes.

    Returns:
        Sampled values, shape (...) or (..., C).
    """
    data, is_depth = _unwrap(raster)
    h, w = data.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    bad = ~(np.isfinite(u) & np.isfinite(v)) | (u < 0) | (u > w) | (v < 0) | (v > h)
    x = np.where(bad, 0.0, u) - 0.5
    y = np.where(bad, 0.0, v) - 0.5
    x0f = np.floor(x)
    y0f = np.floor(y)
    fx = x - x0f
    fy = y - y0f
    x0 = np.clip(x0f, 0, w - 1).astype(np.intp)
    x1 = np.clip(x0f + 1, 0, w - 1).astype(np.intp)
    y0 = np.clip(y0f, 0, h - 1).astype(np.intp)
    y1 = np.clip(y0f + 1, 0, h - 1).astype(np.intp)

    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy

    c00 = data[y0, x0]
    c10 = data[y0, x1]
    c01 = data[y1, x0]
    c11 = data[y1, x1]

    if data.ndim == 3:
        out = (
            w00[..., None] * c00
            + w10[..., None] * c10
            + w01[..., None] * c01
            + w11[..., None] * c11
        )
        out = np.where(bad[..., None], np.nan, out)
        return out

    out = w00 * c00 + w10 * c10 + w01 * c01 + w11 * c11
    if is_depth:
        touched_invalid = (
            ((c00 <= 0) & (w00 > 0))
            | ((c10 <= 0) & (w10 > 0))
            | ((c01 <= 0) & (w01 > 0))
            | ((c11 <= 0) & (w11 > 0))
        )
        bad = bad | touched_invalid
    return np.where(bad, np.nan, out)


def downscale_quarter(raster):
    """4x4 box-average downscale to ceil(W/4) x ceil(H/4).

    Edge blocks average only the pixels that exist.
    """
    data, _ = _unwrap(raster)
    h, w = data.shape[:2]
    h4 = -(-h // 4)
    w4 = -(-w // 4)
    pad_h = h4 * 4 - h
    pad_w = w4 * 4 - w
    padding = ((0, pad_h), (0, pad_w)) + (((0, 0),) if data.ndim == 3 else ())
    padded = np.pad(data.astype(np.float64), padding, mode="constant", constant_values=np.nan)
    if data.ndim == 3:
        blocks = padded.reshape(h4, 4, w4, 4, data.shape[2])
        out = np.nanmean(blocks, axis=(1, 3))
    else:
        blocks = padded.reshape(h4, 4, w4, 4)
        out = np.nanmean(blocks, axis=(1, 3))
    return _rewrap(raster, out.astype(np.float32))


def maxpool3(raster):
    """Per-pixel max over the 3x3 neighborhood, edges clamped."""
    data, _ = _unwrap(raster)
    padding = ((1, 1), (1, 1)) + (((0, 0),) if data.ndim == 3 else ())
    p = np.pad(data, padding, mode="edge")
    h, w = data.shape[:2]
    out = p[0:h, 0:w]
    for dy in range(3):
        for dx in range(3):
            if dy == 0 and dx == 0:
                continue
            out = np.maximum(out, p[dy : dy + h, dx : dx + w])
    return _rewrap(raster, out)


def upscale_bilinear(raster, target_w: int, target_h: int):
    """Bilinear resize with half-pixel-center alignment (borders replicated)."""
    data, _ = _unwrap(raster)
    h, w = data.shape[:2]
    sx = w / target_w
    sy = h / target_h
    xs = (np.arange(target_w, dtype=np.float64) + 0.5) * sx - 0.5
    ys = (np.arange(target_h, dtype=np.float64) + 0.5) * sy - 0.5
    x0f = np.floor(xs)
    y0f = np.floor(ys)
    fx = xs - x0f
    fy = ys - y0f
    x0 = np.clip(x0f, 0, w - 1).astype(np.intp)
    x1 = np.clip(x0f + 1, 0, w - 1).astype(np.intp)
    y0 = np.clip(y0f, 0, h - 1).astype(np.intp)
    y1 = np.clip(y0f + 1, 0, h - 1).astype(np.intp)

    if data.ndim == 3:
        fx = fx[None, :, None]
        fy = fy[:, None, None]
        top = data[y0][:, x0] * (1 - fx) + data[y0][:, x1] * fx
        bot = data[y1][:, x0] * (1 - fx) + data[y1][:, x1] * fx
    else:
        fx = fx[None, :]
        fy = fy[:, None]
        top = data[np.ix_(y0, x0)] * (1 - fx) + data[np.ix_(y0, x1)] * fx
        bot = data[np.ix_(y1, x0)] * (1 - fx) + data[np.ix_(y1, x1)] * fx
    out = top * (1 - fy) + bot * fy
    return _rewrap(raster, out.astype(np.float32))


def normals_from_depth(depth: ScalarMap, cam: Camera) -> NormalMap:
    """Camera-facing world-space normals from a depth map.

    Normals are the normalized cross product of central-difference 3-D
    tangents of the unprojected surface; a normal pointing away from the
    camera is flipped. Border pixels and pixels with any invalid
    central-difference neighbor are invalid (NaN).
    """
    if depth.kind != DEPTH:
        raise ValueError("normals_from_depth expects a depth-kind map")
    d = depth.data.astype(np.float64)
    h, w = d.shape
    valid = d > 0

    us = np.arange(w, dtype=np.float64) + 0.5
    vs = np.arange(h, dtype=np.float64) + 0.5
    x = (us[None, :] - cam.cx) / cam.fx * d
    y = (vs[:, None] - cam.cy) / cam.fy * d
    pts = np.stack([x, y, d], axis=-1)
    pts = (pts - cam.translation) @ cam.rotation  # world coordinates

    normals = np.full((h, w, 3), np.nan, dtype=np.float64)
    if h < 3 or w < 3:
        return NormalMap(normals)

    tx = pts[1:-1, 2:] - pts[1:-1, :-2]
    ty = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(tx, ty)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = n / norm

    view = pts[1:-1, 1:-1] - cam.center
    flip = np.sum(n * view, axis=-1) > 0
    n = np.where(flip[..., None], -n, n)

    ok = (
        valid[1:-1, 1:-1]
        & valid[1:-1, 2:]
        & valid[1:-1, :-2]
        & valid[2:, 1:-1]
        & valid[:-2, 1:-1]
        & (norm[..., 0] > 0)
    )
    normals[1:-1, 1:-1] = np.where(ok[..., None], n, np.nan)
    return NormalMap(normals)
