"""Image-quality and consistency metrics: PSNR, SSIM, L1, TCC, SDT, SDV.

PSNR and SSIM operate on [0, 1]-range images; L1 is reported in 0-255 units
so magnitudes match common benchmark tables. Temporal metrics compare
per-frame difference images (TCC) or track the spread of per-frame L1 error
(SDT); SDV is the same spread across views. Reports are emitted as JSON
lines, one record per frame plus one summary record.
"""

from __future__ import annotations

import json

import numpy as np

PSNR_CAP_DB = 99.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def _img(a) -> np.ndarray:
    data = getattr(a, "data", a)
    return np.asarray(data, dtype=np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB over all pixels and channels.

    Inputs are [0, 1]-range images; identical images report the 99 dB cap.
    """
    x = _img(a)
    y = _img(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse <= 0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_kernel() -> np.ndarray:
    r = _SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * _SSIM_SIGMA**2))
    return k / k.sum()


def _blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable correlation with reflect (symmetric) padding."""
    r = len(kernel) // 2
    p = np.pad(img, ((r, r), (0, 0)), mode="symmetric")
    out = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        out += kv * p[i : i + img.shape[0], :]
    p = np.pad(out, ((0, 0), (r, r)), mode="symmetric")
    out2 = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        out2 += kv * p[:, i : i + img.shape[1]]
    return out2


def _ssim_single(x: np.ndarray, y: np.ndarray, kernel: np.ndarray) -> float:
    mu_x = _blur(x, kernel)
    mu_y = _blur(y, kernel)
    var_x = _blur(x * x, kernel) - mu_x**2
    var_y = _blur(y * y, kernel) - mu_y**2
    cov = _blur(x * y, kernel) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_x**2 + mu_y**2 + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Single-scale SSIM: 11x11 Gaussian window (sigma 1.5) on [0, 1] range.

    Multichannel images are averaged over channels. Borders use symmetric
    padding so small images are well defined.
    """
    x = _img(a)
    y = _img(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    kernel = _gaussian_kernel()
    if x.ndim == 2:
        return _ssim_single(x, y, kernel)
    return float(np.mean([_ssim_single(x[..., c], y[..., c], kernel) for c in range(x.shape[-1])]))


def l1_255(a, b) -> float:
    """Mean absolute error scaled to 0-255 units."""
    x = _img(a)
    y = _img(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    return float(np.mean(np.abs(x - y)) * 255.0)


def tcc(rendered, gt) -> float:
    """Temporal change consistency between two frame sequences.

    SSIM between consecutive-frame absolute-difference images, averaged
    over all adjacent pairs; differences are taken per channel and the
    SSIM is channel-averaged.

    Raises:
        ValueError: with fewer than two frames.
    """
    if len(rendered) != len(gt):
        raise ValueError("sequences must have equal length")
    if len(rendered) < 2:
        raise ValueError("TCC requires at least two frames")
    vals = []
    for t in range(len(rendered) - 1):
        dr = np.abs(_img(rendered[t + 1]) - _img(rendered[t]))
        dg = np.abs(_img(gt[t + 1]) - _img(gt[t]))
        vals.append(ssim(dr, dg))
    return float(np.mean(vals))


def sdt(rendered, gt) -> float:
    """Population std of per-frame L1 error (0-255 scale) across time."""
    if len(rendered) != len(gt):
        raise ValueError("sequences must have equal length")
    errs = [l1_255(r, g) for r, g in zip(rendered, gt)]
    return float(np.std(errs))


def sdv(per_view_l1: list[float]) -> float:
    """Population std of per-view L1 errors (view-consistency spread)."""
    return float(np.std(np.asarray(per_view_l1, dtype=np.float64)))


def frame_record(frame: int, **values) -> dict:
    """One report record; schema: {"type": "frame", "frame": t, metrics...}."""
    rec = {"type": "frame", "frame": frame}
    rec.update(values)
    return rec


def summary_record(**values) -> dict:
    """Summary record; uncomputed metrics are listed as "not computed"."""
    rec = {"type": "summary", "lpips": "not computed", "sted": "not computed"}
    rec.update(values)
    return rec


def write_report(path, records: list[dict]) -> None:
    """Write records as JSON lines (one structured text record each)."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_report(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
