"""Image-space TSDF evaluation and per-pixel ray marching.

The truncated signed distance at a world point is evaluated on demand by
projecting the point into each input view and comparing its camera depth
against the view's depth map; no voxel grid is materialized. Per-view
observations are confidence-weighted by local depth variance, optionally
joined by a temporal term that treats the previous frame's novel-view depth
as an extra depth map rendered from the target camera.

Sign convention: signed distance s = z - D is negative between the camera
and the observed surface and positive behind it. The ray march advances on
the negated, weight-normalized fusion (a metric distance-to-surface
estimate), so a surface hit is a positive-to-negative crossing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, Z_EPS, pixel_ray_grid, project
from .raster import DEPTH, MASK, WEIGHT, ColorImage, ScalarMap, sample_bilinear
from . import splat as _splat


@dataclass(frozen=True)
class TsdfParams:
    """Truncation, fusion, and march parameters.

    tau: truncation distance in meters.
    window: odd side length of the fusion-weight neighborhood in pixels.
    step_factor: fraction of the fused distance marched per step.
    bisection_steps: refinement iterations after a sign change.
    eta: cap on the temporal fusion weight.
    beta_tmp: scale of the temporal contribution (the paper leaves the
        previous-frame contribution scale free; 1.0 by default).
    near, far: march limits as camera-space depth planes in meters.
    skip_budget: consecutive fixed skip steps through fully unobserved
        space before a ray gives up.
    skip_step: length of those fixed steps (default 4 * tau).
    max_iters: hard cap on march iterations per frame.
    normalize: divide the fused value by the weight sum, making it a
        metric distance estimate (switchable for A/B comparison; the march
        itself always steps on the normalized value).
    """

    tau: float = 0.02
    window: int = 7
    step_factor: float = 0.8
    bisection_steps: int = 3
    eta: float = 15.0
    beta_tmp: float = 1.0
    near: float = 0.1
    far: float = 100.0
    skip_budget: int = 64
    skip_step: float | None = None
    max_iters: int = 512
    normalize: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 1")
        if not (0 < self.step_factor < 1):
            raise ValueError("step_factor must be in (0, 1)")
        if not self.near < self.far:
            raise ValueError("near must be less than far")
        if not self.eta > 0 or self.beta_tmp < 0:
            raise ValueError("eta must be positive and beta_tmp non-negative")

    @property
    def march_floor(self) -> float:
        """Minimum in-band step (tau / 4) to prevent stalls near a surface."""
        return self.tau / 4.0

    @property
    def effective_skip_step(self) -> float:
        return self.skip_step if self.skip_step is not None else 4.0 * self.tau


@dataclass
class TemporalContext:
    """Previous-frame guidance for the target camera."""

    camera: Camera
    prev_depth: ScalarMap
    mask: ScalarMap  # novel-view difference mask
    omega_acc: ScalarMap  # accumulated fusion weight


@dataclass
class TsdfContext:
    """Per-frame field definition: filtered input views plus optional temporal term."""

    views: list[tuple[Camera, ScalarMap]]
    temporal: TemporalContext | None = None

    def __post_init__(self):
        if not self.views:
            raise ValueError("TsdfContext requires at least one view")
        for cam, depth in self.views:
            if depth.data.shape != cam.shape:
                raise ValueError("depth raster does not match its camera dimensions")


@dataclass
class RaymarchResult:
    """Novel-view depth with per-pixel hit bookkeeping.

    view_weights[k] and temporal_weight hold each contribution's fusion
    weight evaluated at the ray's surface hit, feeding the next frame's
    accumulated weight. bracket_lo/hi are the bracketing depths around
    each hit (diagnostics; NaN where there is no hit).
    """

    depth: ScalarMap
    hitmask: ScalarMap
    view_weights: list[ScalarMap]
    temporal_weight: ScalarMap | None
    bracket_lo: np.ndarray = field(repr=False, default=None)
    bracket_hi: np.ndarray = field(repr=False, default=None)


def signed_distance(points, cam: Camera, depth: ScalarMap):
    """Signed distance of world points against one view's depth map.

    s = (camera-space z) - (bilinearly sampled depth at the projection).
    Returns NaN where the projection is out of bounds, behind the camera,
    or samples invalid depth.
    """
    u, v, z = project(points, cam)
    d = sample_bilinear(depth, u, v)
    return z - d


def weight_from_variance(nu, params: TsdfParams):
    """Fusion weight from the clamped neighborhood depth variation nu."""
    n = params.window * params.window
    nu = np.asarray(nu, dtype=np.float64)
    with np.errstate(divide="ignore"):
        w = 0.001 / np.sqrt(nu / n)
    return np.where(nu <= 0, 1.0, np.minimum(w, 1.0))


def fusion_weight(depth: ScalarMap, u, v, params: TsdfParams):
    """Confidence weight from depth variation around a projected location.

    nu sums min((D[u, v] - D[p, q])^2, tau^2) over the window x window
    integer pixels around (u, v), where D[u, v] is the bilinear sample;
    out-of-image or invalid neighbors contribute tau^2. An invalid center
    sample gives weight 0.
    """
    d = depth.data
    h, w = d.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    ctr = sample_bilinear(depth, u, v)
    ctr_ok = np.isfinite(ctr)
    ctr_f = np.where(ctr_ok, ctr, 0.0)
    ix = np.clip(np.nan_to_num(np.floor(u)), -1, w).astype(np.int64)
    iy = np.clip(np.nan_to_num(np.floor(v)), -1, h).astype(np.int64)
    tau2 = params.tau * params.tau
    r = params.window // 2
    nu = np.zeros(np.broadcast(u, v).shape, dtype=np.float64)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            px = ix + dx
            py = iy + dy
            inb = (px >= 0) & (px < w) & (py >= 0) & (py < h)
            dv = d[np.clip(py, 0, h - 1), np.clip(px, 0, w - 1)]
            ok = inb & (dv > 0)
            diff2 = (ctr_f - dv) ** 2
            nu += np.where(ok, np.minimum(diff2, tau2), tau2)
    w_out = weight_from_variance(nu, params)
    return np.where(ctr_ok, w_out, 0.0)


def fusion_weight_map(depth: ScalarMap, params: TsdfParams) -> np.ndarray:
    """Fusion weight evaluated at every pixel center.

    Identical to fusion_weight at integer-center coordinates; the ray
    march samples this precomputed field instead of re-gathering the
    neighborhood at every step.
    """
    d = depth.data.astype(np.float32)
    h, w = d.shape
    valid = d > 0
    tau2 = np.float32(params.tau * params.tau)
    r = params.window // 2
    pad = np.pad(d, r, mode="constant", constant_values=0.0)
    nu = np.zeros((h, w), dtype=np.float32)
    for dy in range(params.window):
        for dx in range(params.window):
            nb = pad[dy : dy + h, dx : dx + w]
            diff2 = (d - nb) ** 2
            nu += np.where(nb > 0, np.minimum(diff2, tau2), tau2)
    # padded zeros already charged tau^2 for out-of-image neighbors
    w_map = weight_from_variance(nu, params).astype(np.float32)
    w_map[~valid] = 0.0
    return w_map


def _temporal_tables(temporal: TemporalContext | None, params: TsdfParams):
    if temporal is None:
        return None
    prev = temporal.prev_depth.data.reshape(-1).astype(np.float64)
    m = temporal.mask.data.reshape(-1).astype(np.float64)
    acc = temporal.omega_acc.data.reshape(-1).astype(np.float64)
    w0 = np.minimum(params.beta_tmp * acc * np.maximum(1.0 - m, 0.0), params.eta)
    w0[prev <= 0] = 0.0
    return prev, w0


class _FusedField:
    """Vectorized fused-TSDF evaluator over one frame's context."""

    def __init__(self, ctx: TsdfContext, params: TsdfParams, exact_weights: bool = False):
        self.params = params
        self.exact = exact_weights
        self.views = []
        for cam, depth in ctx.views:
            wmap = None if exact_weights else fusion_weight_map(depth, params)
            self.views.append((cam, depth, wmap))
        self.temporal = _temporal_tables(ctx.temporal, params)

    def __call__(self, points, z_target=None, pix_index=None, collect_weights=False):
        """Fused signed distance at world points.

        Args:
            points: (N, 3) world points.
            z_target: (N,) target-camera depth of each point (required
                when a temporal term is present).
            pix_index: (N,) flat target-pixel index per point (temporal).
            collect_weights: also return each contribution's weight.

        Returns:
            (s, wsum, front_gap[, weights]): normalized fused signed
            distance (NaN where wsum == 0), the weight sum, and the
            smallest free-space distance witnessed by any view (-s over
            views that see the point more than tau in front of their
            surface; +inf where no view sees it at all).
        """
        p = self.params
        tau = p.tau
        n = len(points)
        num = np.zeros(n, dtype=np.float64)
        den = np.zeros(n, dtype=np.float64)
        front_gap = np.full(n, np.inf, dtype=np.float64)
        weights = [] if collect_weights else None

        for cam, depth, wmap in self.views:
            u, v, z = project(points, cam)
            dsamp = sample_bilinear(depth, u, v)
            s = z - dsamp
            valid = np.isfinite(s)
            if self.exact:
                w = fusion_weight(depth, u, v, p)
            else:
                w = sample_bilinear(wmap, u, v)
                w = np.where(np.isfinite(w), w, 0.0)
            w = np.where(valid & (s >= -tau), w, 0.0)
            sc = np.clip(np.where(valid, s, 0.0), -tau, tau)
            num += w * sc
            den += w
            infront = valid & (s < -tau)
            front_gap = np.where(infront, np.minimum(front_gap, -s), front_gap)
            if collect_weights:
                weights.append(w)

        if self.temporal is not None:
            prev, w0 = self.temporal
            pd = prev[pix_index]
            s = z_target - pd
            valid = pd > 0
            w = np.where(valid & (s >= -tau), w0[pix_index], 0.0)
            sc = np.clip(np.where(valid, s, 0.0), -tau, tau)
            num += w * sc
            den += w
            infront = valid & (s < -tau)
            front_gap = np.where(infront, np.minimum(front_gap, -s), front_gap)
            if collect_weights:
                weights.append(w)

        with np.errstate(invalid="ignore", divide="ignore"):
            s_fused = np.where(den > 0, num / den, np.nan)
        if collect_weights:
            return s_fused, den, front_gap, weights
        return s_fused, den, front_gap


def fused_tsdf(points, ctx: TsdfContext, pixel, params: TsdfParams, exact_weights: bool = True):
    """Weight-normalized fused signed distance at world points.

    pixel identifies the target ray as (row, col) per point; it locates
    the temporal samples (previous novel-view depth, mask, accumulated
    weight) and may be None when the context has no temporal term.

    Returns:
        (s, wsum): fused value (NaN marks no-observation) and the weight
        sum including the temporal weight. With normalize=False in params
        the raw weighted sum is returned instead.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    field_ = _FusedField(ctx, params, exact_weights=exact_weights)
    z_target = None
    pix_index = None
    if ctx.temporal is not None:
        if pixel is None:
            raise ValueError("pixel is required when the context has a temporal term")
        pix = np.atleast_2d(np.asarray(pixel, dtype=np.int64))
        w = ctx.temporal.camera.width
        pix_index = pix[..., 0] * w + pix[..., 1]
        _, _, z_target = project(pts, ctx.temporal.camera)
    s, wsum, _ = field_(pts, z_target=z_target, pix_index=pix_index)
    if not params.normalize:
        s = s * wsum
    if np.ndim(points) == 1:
        return float(s[0]), float(wsum[0])
    return s, wsum


def splat_masks_to_target(
    masks: list[ScalarMap],
    src_cams: list[Camera],
    src_depths: list[ScalarMap],
    target: Camera,
) -> ScalarMap:
    """Forward-render per-view difference masks into the target view.

    Each mask is splatted with the view's (filtered) depth as geometry and
    the mask value as a single-channel color, normalized by accumulated
    opacity; the output is the per-pixel maximum over covered views.
    Pixels covered by no splat default to 1 (unknown counts as dynamic).
    """
    h, w = target.shape
    out = np.full((h, w), np.nan, dtype=np.float32)
    for mask, cam, depth in zip(masks, src_cams, src_depths):
        splats = _splat.gaussians_from_view(mask.data[..., None], depth, cam)
        img, alpha, _ = _splat._render_arrays(splats, target)
        covered = alpha > 1e-4
        val = np.where(covered, img[..., 0] / np.maximum(alpha, 1e-30), np.nan)
        out = np.where(np.isnan(out), val, np.where(np.isnan(val), out, np.maximum(out, val)))
    out = np.where(np.isnan(out), 1.0, out)
    return ScalarMap(np.clip(out, 0.0, 1.0), kind=MASK)


def update_accumulated_weight(
    prev: RaymarchResult | None, params: TsdfParams, shape: tuple[int, int]
) -> ScalarMap:
    """Accumulated fusion weight for the temporal term.

    Sums the previous frame's per-view hit weights plus its temporal hit
    weight, capped at 10 * eta to bound growth; zeros at t=0.
    """
    if prev is None:
        return ScalarMap(np.zeros(shape, dtype=np.float32), kind=WEIGHT)
    acc = np.zeros(shape, dtype=np.float64)
    for wmap in prev.view_weights:
        acc += wmap.data
    if prev.temporal_weight is not None:
        acc += prev.temporal_weight.data
    return ScalarMap(np.minimum(acc, 10.0 * params.eta), kind=WEIGHT)


def raymarch_depth(ctx: TsdfContext, target: Camera, params: TsdfParams) -> RaymarchResult:
    """March every target pixel through the fused field to a depth map.

    Rays start at the near plane. Through fully unobserved space they take
    fixed skip steps (budgeted; overrunning the budget invalidates the
    ray). Where some view reports free space (s < -tau carries no fusion
    weight but does witness the distance to that view's surface) the ray
    jumps most of the witnessed gap, never overshooting the truncation
    band. Inside the band it advances by step_factor * max(dist, tau/4)
    and, on the first positive-to-negative crossing of the fused
    distance-to-surface, refines the hit with bisection. Per-view and
    temporal fusion weights are recorded at each hit for the next frame.
    """
    h, w = target.shape
    n = h * w
    field_ = _FusedField(ctx, params)
    origin, dirs, axial = pixel_ray_grid(target)
    dirs_f = dirs.reshape(-1, 3)
    axial_f = axial.reshape(-1)

    t = params.near / axial_f  # ray-length parameter; camera depth = t * axial
    t_far = params.far / axial_f
    prev_m = np.full(n, np.nan)
    prev_t = np.zeros(n)
    last_step = np.zeros(n)
    noobs = np.zeros(n, dtype=np.int32)
    lo = np.full(n, np.nan)
    hi = np.full(n, np.nan)
    overshoot = np.zeros(n, dtype=bool)
    active = np.arange(n)
    has_temporal = ctx.temporal is not None
    skip = params.effective_skip_step
    tau = params.tau

    for _ in range(params.max_iters):
        if active.size == 0:
            break
        pts = origin + t[active, None] * dirs_f[active]
        z_tgt = t[active] * axial_f[active] if has_temporal else None
        s, den, gap = field_(pts, z_target=z_tgt, pix_index=active if has_temporal else None)
        m = -s  # positive in front of the fused surface

        obs = den > 0
        hit = obs & (m <= 0)
        if np.any(hit):
            ai = active[hit]
            have_prev = np.isfinite(prev_m[ai])
            lo[ai] = np.where(have_prev, prev_t[ai], np.maximum(t[ai] - last_step[ai], 0.0))
            hi[ai] = t[ai]
            overshoot[ai] = ~have_prev

        stepping = obs & ~hit
        if np.any(stepping):
            ai = active[stepping]
            mm = m[stepping]
            prev_m[ai] = mm
            prev_t[ai] = t[ai]
            step = params.step_factor * np.maximum(mm, params.march_floor)
            t[ai] += step
            last_step[ai] = step
            noobs[ai] = 0

        witness = ~obs & np.isfinite(gap)
        if np.any(witness):
            ai = active[witness]
            # Free-space observation: the nearest witnessed band start is
            # gap - tau away in view depth, hence at least that far along
            # the ray; stepping 80% of it cannot overshoot the band, and
            # the tau/2 floor cannot skip its positive half.
            step = np.maximum(0.8 * (gap[witness] - tau), 0.5 * tau)
            t[ai] += step
            last_step[ai] = step
            prev_m[ai] = np.nan
            noobs[ai] = 0

        dark = ~obs & ~np.isfinite(gap)
        if np.any(dark):
            ai = active[dark]
            t[ai] += skip
            last_step[ai] = skip
            prev_m[ai] = np.nan
            noobs[ai] += 1

        keep = ~hit
        keep &= ~(dark & (noobs[active] > params.skip_budget))
        keep &= t[active] <= t_far[active]
        active = active[keep]

    def _refine(idx, rounds):
        # Interval halving on "in front of the fused surface". Unobserved
        # midpoints count as in-front: a bracket may start in a
        # free-space gap (overshoot fallback), and the crossing must not
        # collapse toward it.
        for _ in range(rounds):
            if idx.size == 0:
                return
            mid = 0.5 * (lo[idx] + hi[idx])
            pts = origin + mid[:, None] * dirs_f[idx]
            z_tgt = mid * axial_f[idx] if has_temporal else None
            s, den, _ = field_(pts, z_target=z_tgt, pix_index=idx if has_temporal else None)
            in_front = (den <= 0) | (-s > 0)
            lo[idx] = np.where(in_front, mid, lo[idx])
            hi[idx] = np.where(in_front, hi[idx], mid)

    hit_idx = np.flatnonzero(np.isfinite(hi))
    # Overshot brackets span an unobserved gap much wider than the band;
    # shrink them near the band entry before the standard refinement.
    _refine(hit_idx[overshoot[hit_idx]], 8)
    _refine(hit_idx, params.bisection_steps)

    depth = np.zeros(n, dtype=np.float64)
    hitmask = np.zeros(n, dtype=np.float32)
    k = len(ctx.views)
    view_w = np.zeros((k, n), dtype=np.float32)
    tmp_w = np.zeros(n, dtype=np.float32) if has_temporal else None

    if hit_idx.size:
        t_hit = 0.5 * (lo[hit_idx] + hi[hit_idx])
        depth[hit_idx] = t_hit * axial_f[hit_idx]
        hitmask[hit_idx] = 1.0
        pts = origin + t_hit[:, None] * dirs_f[hit_idx]
        z_tgt = t_hit * axial_f[hit_idx] if has_temporal else None
        _, _, _, wlist = field_(
            pts, z_target=z_tgt, pix_index=hit_idx if has_temporal else None, collect_weights=True
        )
        for i in range(k):
            view_w[i, hit_idx] = wlist[i]
        if has_temporal:
            tmp_w[hit_idx] = wlist[k]

    axial_grid = axial_f.reshape(h, w)
    return RaymarchResult(
        depth=ScalarMap(depth.reshape(h, w), kind=DEPTH),
        hitmask=ScalarMap(hitmask.reshape(h, w), kind=MASK),
        view_weights=[ScalarMap(view_w[i].reshape(h, w), kind=WEIGHT) for i in range(k)],
        temporal_weight=ScalarMap(tmp_w.reshape(h, w), kind=WEIGHT) if has_temporal else None,
        bracket_lo=(lo.reshape(h, w) * axial_grid),
        bracket_hi=(hi.reshape(h, w) * axial_grid),
    )
