"""Distortion attacks with fixed defaults, diffusion purification through the
analytic model, and the mean-estimation averaging attack.

All attacks preserve shape and are deterministic under a fixed seed.  The
codec attack is a block-DCT quantization surrogate (labeled ``jpeg_like``):
it reproduces the frequency-selective degradation of real compression
without an external codec, quantizing relative to each channel's own range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.fft import dctn, idctn

from .diffusion import AnalyticDiffusion
from .numerics import as_image

VARIANTS = (
    "jpeg_like",
    "gaussian_blur",
    "gaussian_noise",
    "color_jitter",
    "resize_restore",
    "random_drop",
    "median_blur",
    "diffpure",
    "averaging",
)

_DEFAULTS: dict[str, dict[str, float]] = {
    "jpeg_like": {"quality": 25},
    "gaussian_blur": {"kernel": 8},
    "gaussian_noise": {"sigma": 0.1},
    "color_jitter": {"brightness_min": 0.0, "brightness_max": 6.0},
    "resize_restore": {"fraction": 0.5},
    "random_drop": {"area_fraction": 0.4},
    "median_blur": {"kernel": 7},
    "diffpure": {"strength": 0.3},
    "averaging": {"strength": 1.0, "set_size": 16},
}

# Standard luminance quantization table, scaled by the usual quality rule.
_LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class AttackSpec:
    """Variant tag plus parameter overrides; unset parameters use defaults."""

    variant: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown attack variant {self.variant!r}")
        unknown = set(self.params) - set(_DEFAULTS[self.variant])
        if unknown:
            raise ValueError(f"unknown parameters for {self.variant}: {sorted(unknown)}")
        object.__setattr__(self, "params", dict(self.params))

    def get(self, name: str) -> float:
        return self.params.get(name, _DEFAULTS[self.variant][name])

    def to_dict(self) -> dict:
        return {"variant": self.variant, **self.params}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "AttackSpec":
        doc = dict(doc)
        return cls(variant=doc.pop("variant"), params=doc)


def _quality_table(quality: float) -> np.ndarray:
    if not 1 <= quality <= 100:
        raise ValueError("quality must be in [1, 100]")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.floor((_LUMA_TABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def _blockwise(channel: np.ndarray, table: Optional[np.ndarray]) -> np.ndarray:
    h, w = channel.shape
    ph = (-h) % 8
    pw = (-w) % 8
    padded = np.pad(channel, ((0, ph), (0, pw)), mode="edge")
    out = np.empty_like(padded)
    for i in range(0, padded.shape[0], 8):
        for j in range(0, padded.shape[1], 8):
            coef = dctn(padded[i : i + 8, j : j + 8], norm="ortho")
            if table is not None:
                coef = np.round(coef / table) * table
            out[i : i + 8, j : j + 8] = idctn(coef, norm="ortho")
    return out[:h, :w]


def _jpeg_like(image: np.ndarray, quality: float) -> np.ndarray:
    # Quality 100 skips quantization entirely so it is an exact identity.
    table = None if quality == 100 else _quality_table(quality)
    out = np.empty_like(image)
    for c in range(image.shape[0]):
        lo = float(image[c].min())
        hi = float(image[c].max())
        if hi == lo:
            out[c] = image[c]
            continue
        scaled = (image[c] - lo) * (255.0 / (hi - lo))
        out[c] = _blockwise(scaled, table) * ((hi - lo) / 255.0) + lo
    return out


def _gaussian_kernel(size: int) -> np.ndarray:
    sigma = size / 3.0
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _bilinear_resize(channel: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center aligned bilinear interpolation."""
    h, w = channel.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = channel[np.ix_(y0, x0)] * (1 - wx) + channel[np.ix_(y0, x1)] * wx
    bot = channel[np.ix_(y1, x0)] * (1 - wx) + channel[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def apply_attack(
    image,
    spec: AttackSpec,
    rng: np.random.Generator,
    model: Optional[AnalyticDiffusion] = None,
    watermarked_set: Optional[Sequence[np.ndarray]] = None,
    clean_reference: Optional[Sequence[np.ndarray]] = None,
) -> np.ndarray:
    """Apply one attack; shape-preserving, deterministic given the rng state.

    ``diffpure`` needs the diffusion model; ``averaging`` needs the shared
    watermarked set and a clean reference batch.
    """
    arr = as_image(image)
    v = spec.variant

    if v == "jpeg_like":
        return _jpeg_like(arr, spec.get("quality"))

    if v == "gaussian_blur":
        size = int(spec.get("kernel"))
        if size < 1:
            raise ValueError("kernel must be >= 1")
        kernel = _gaussian_kernel(size)
        out = np.empty_like(arr)
        for c in range(arr.shape[0]):
            out[c] = ndimage.convolve(arr[c], kernel, mode="reflect")
        return out

    if v == "gaussian_noise":
        sigma = float(spec.get("sigma"))
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if sigma == 0.0:
            return arr.copy()
        return arr + sigma * rng.standard_normal(arr.shape)

    if v == "color_jitter":
        lo = float(spec.get("brightness_min"))
        hi = float(spec.get("brightness_max"))
        if hi < lo:
            raise ValueError("brightness_max must be >= brightness_min")
        factor = float(rng.uniform(lo, hi))
        return arr * factor

    if v == "resize_restore":
        fraction = float(spec.get("fraction"))
        if not 0.0 < fraction <= 1.0:
            raise ValueError("fraction must be in (0, 1]")
        _, h, w = arr.shape
        dh = max(1, math.ceil(h * fraction))
        dw = max(1, math.ceil(w * fraction))
        out = np.empty_like(arr)
        for c in range(arr.shape[0]):
            small = _bilinear_resize(arr[c], dh, dw)
            out[c] = _bilinear_resize(small, h, w)
        return out

    if v == "random_drop":
        frac = float(spec.get("area_fraction"))
        if not 0.0 <= frac <= 1.0:
            raise ValueError("area_fraction must be in [0, 1]")
        _, h, w = arr.shape
        side = min(int(round(math.sqrt(frac * h * w))), h, w)
        out = arr.copy()
        if side > 0:
            top = int(rng.integers(0, h - side + 1))
            left = int(rng.integers(0, w - side + 1))
            out[:, top : top + side, left : left + side] = 0.0
        return out

    if v == "median_blur":
        size = int(spec.get("kernel"))
        if size < 1:
            raise ValueError("kernel must be >= 1")
        out = np.empty_like(arr)
        for c in range(arr.shape[0]):
            out[c] = ndimage.median_filter(arr[c], size=size, mode="reflect")
        return out

    if v == "diffpure":
        if model is None:
            raise ValueError("diffpure needs the diffusion model")
        return diffpure(arr, model, float(spec.get("strength")))

    if v == "averaging":
        if watermarked_set is None or clean_reference is None:
            raise ValueError("averaging needs the watermarked set and clean reference")
        return averaging_attack(
            watermarked_set, arr, float(spec.get("strength")), clean_reference
        )

    raise ValueError(f"unknown attack variant {v!r}")  # pragma: no cover


def diffpure(image, model: AnalyticDiffusion, strength_fraction: float) -> np.ndarray:
    """Invert to floor(strength * T) (at least one step) and sample back."""
    if not 0.0 < strength_fraction < 1.0:
        raise ValueError("strength_fraction must be in (0, 1)")
    t = max(1, int(math.floor(strength_fraction * model.T)))
    arr = as_image(image)
    return model.ddim_run(model.ddim_run(arr, 0, t), t, 0)


def averaging_attack(
    watermarked_set: Sequence[np.ndarray],
    target,
    strength: float,
    clean_reference: Sequence[np.ndarray],
) -> np.ndarray:
    """Subtract the estimated common additive component from the target.

    The estimate is mean(watermarked set) - mean(clean reference): with many
    images sharing one key, their average isolates whatever the key adds.
    """
    if len(watermarked_set) < 2:
        raise ValueError("averaging needs at least 2 watermarked images")
    if len(clean_reference) < 1:
        raise ValueError("averaging needs a nonempty clean reference batch")
    arr = as_image(target)
    wm_mean = np.mean([as_image(x) for x in watermarked_set], axis=0)
    clean_mean = np.mean([as_image(x) for x in clean_reference], axis=0)
    return arr - strength * (wm_mean - clean_mean)
