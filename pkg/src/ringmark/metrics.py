"""Consistency metrics (PSNR, single-scale SSIM) and detection-score ROC
aggregation (AUC, TPR at 1% FPR).

The detection statistic is "smaller means watermarked", so ROC positives are
the scores below a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 99.0


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE), capped at 99 dB (the identical-image sentinel)."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if peak <= 0.0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak**2 / mse))


def ssim(
    a,
    b,
    peak: float = 1.0,
    window: int = 8,
    c1: float | None = None,
    c2: float | None = None,
) -> float:
    """Mean single-scale SSIM over uniform sliding windows and channels.

    Constants default to (0.01 peak)^2 and (0.03 peak)^2; window statistics
    use population variance.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x = x[None]
        y = y[None]
    if x.ndim != 3:
        raise ValueError("expected (C, H, W) or (H, W) arrays")
    _, h, w = x.shape
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} smaller than the {window}x{window} window")
    if c1 is None:
        c1 = (0.01 * peak) ** 2
    if c2 is None:
        c2 = (0.03 * peak) ** 2

    values = []
    for xc, yc in zip(x, y):
        xs = np.lib.stride_tricks.sliding_window_view(xc, (window, window))
        ys = np.lib.stride_tricks.sliding_window_view(yc, (window, window))
        mx = xs.mean(axis=(-1, -2))
        my = ys.mean(axis=(-1, -2))
        vx = (xs**2).mean(axis=(-1, -2)) - mx**2
        vy = (ys**2).mean(axis=(-1, -2)) - my**2
        cov = (xs * ys).mean(axis=(-1, -2)) - mx * my
        score = ((2 * mx * my + c1) * (2 * cov + c2)) / (
            (mx**2 + my**2 + c1) * (vx + vy + c2)
        )
        values.append(score.mean())
    return float(np.mean(values))


def normalize01(x) -> np.ndarray:
    """Min-max normalize one tensor to [0, 1]; a flat tensor maps to zeros."""
    arr = np.asarray(x, dtype=np.float64)
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def consistency(a, b, window: int = 8) -> tuple[float, float, float]:
    """(PSNR, SSIM, raw MSE) with each tensor min-max normalized to peak 1."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    raw_mse = float(np.mean((x - y) ** 2))
    xn = normalize01(x)
    yn = normalize01(y)
    return psnr(xn, yn, peak=1.0), ssim(xn, yn, peak=1.0, window=window), raw_mse


@dataclass(frozen=True)
class RocCurve:
    """ROC of "watermarked iff score < threshold" decisions."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    tpr_at_1pct_fpr: float


def roc(watermarked_scores, clean_scores) -> RocCurve:
    """ROC over all distinct thresholds, trapezoid AUC, interpolated TPR@1%FPR.

    Watermarked samples are the positives and count as detected when their
    score is strictly below the threshold.  The final (1, 1) point represents
    the detect-everything decision.
    """
    wm = np.asarray(watermarked_scores, dtype=np.float64)
    cl = np.asarray(clean_scores, dtype=np.float64)
    if wm.size == 0 or cl.size == 0:
        raise ValueError("score lists must be nonempty")
    cuts = np.unique(np.concatenate([wm, cl]))
    wm_sorted = np.sort(wm)
    cl_sorted = np.sort(cl)
    tpr = np.searchsorted(wm_sorted, cuts, side="left") / wm.size
    fpr = np.searchsorted(cl_sorted, cuts, side="left") / cl.size
    tpr = np.concatenate([tpr, [1.0]])
    fpr = np.concatenate([fpr, [1.0]])
    thresholds = np.concatenate([cuts, [np.inf]])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(
        thresholds=thresholds,
        fpr=fpr,
        tpr=tpr,
        auc=auc,
        tpr_at_1pct_fpr=_tpr_at_fpr(fpr, tpr, 0.01),
    )


def _tpr_at_fpr(fpr: np.ndarray, tpr: np.ndarray, target: float) -> float:
    """TPR at the last point with FPR <= target, linearly interpolated."""
    below = np.nonzero(fpr <= target)[0]
    if below.size == 0:
        return 0.0
    k = int(below[-1])
    if fpr[k] == target or k == fpr.size - 1:
        return float(tpr[k])
    span = fpr[k + 1] - fpr[k]
    if span == 0.0:
        return float(tpr[k])
    frac = (target - fpr[k]) / span
    return float(tpr[k] + frac * (tpr[k + 1] - tpr[k]))
