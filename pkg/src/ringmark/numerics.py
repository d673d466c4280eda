"""Numerical substrate: orthonormal 2-D DFTs with explicit centering,
uniform sampling on the unit hypersphere, and SVD-based numerical rank.

Everything here is a pure function over value data; RNG state is always an
explicit argument.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class ImaginaryResidualExceeded(ValueError):
    """Inverse DFT produced an imaginary part too large to discard.

    Raised when the spectrum handed to :func:`idft2` is not Hermitian, which
    for this package means a watermark key without the required symmetry.
    """


def as_image(x) -> np.ndarray:
    """Validate and return a (C, H, W) float64 tensor.

    H and W must be even so the Nyquist bin sits at an exact array center;
    the disk mask geometry depends on that.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected a (C, H, W) array, got shape {arr.shape}")
    c, h, w = arr.shape
    if c < 1 or h < 2 or w < 2:
        raise ValueError(f"degenerate image shape {arr.shape}")
    if h % 2 != 0 or w % 2 != 0:
        raise ValueError(f"H and W must be even, got {h}x{w}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def dft2(channel, centered: bool = False) -> np.ndarray:
    """Orthonormal 2-D DFT of a single H x W channel.

    Scaling is 1/sqrt(HW) in each direction, so Parseval holds exactly.
    With ``centered=False`` the zero-frequency bin stays at index (0, 0)
    and the array center (H/2, W/2) holds the highest frequencies; with
    ``centered=True`` the spectrum is cyclically shifted so zero frequency
    sits at the center.
    """
    arr = np.asarray(channel, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D channel, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("channel contains non-finite values")
    spec = np.fft.fft2(arr, norm="ortho")
    if centered:
        spec = np.fft.fftshift(spec)
    return spec


def idft2(
    spectrum,
    centered: bool = False,
    max_residual: float = 1e-6,
) -> tuple[np.ndarray, float]:
    """Invert :func:`dft2` with the same centering convention.

    Returns ``(real_part, residual)`` where ``residual`` is the maximum
    absolute imaginary component of the inverse transform.  A residual above
    ``max_residual`` raises :class:`ImaginaryResidualExceeded`: the spectrum
    was not Hermitian, so no real image reproduces it.
    """
    spec = np.asarray(spectrum, dtype=np.complex128)
    if spec.ndim != 2:
        raise ValueError(f"expected a 2-D spectrum, got shape {spec.shape}")
    if not np.all(np.isfinite(spec)):
        raise ValueError("spectrum contains non-finite values")
    if centered:
        spec = np.fft.ifftshift(spec)
    out = np.fft.ifft2(spec, norm="ortho")
    residual = float(np.max(np.abs(out.imag)))
    if residual > max_residual:
        raise ImaginaryResidualExceeded(
            f"imaginary residual {residual:.3e} exceeds {max_residual:.3e}; "
            "the spectrum is not Hermitian"
        )
    return np.ascontiguousarray(out.real), residual


def sample_unit_sphere(d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the unit sphere in R^d (normalized Gaussian)."""
    if d < 2:
        raise ValueError(f"dimension must be >= 2, got {d}")
    while True:
        v = rng.standard_normal(d)
        norm = float(np.linalg.norm(v))
        if norm > 0.0:
            return v / norm


class RankInfo(NamedTuple):
    rank: int
    ratio: float
    sigma_max: float


def numerical_rank(matrix, rel_threshold: float = 1e-2) -> RankInfo:
    """Numerical rank of a square matrix.

    Counts singular values at or above ``rel_threshold`` times the largest
    one and reports the count, the count over the dimension, and the largest
    singular value (the spectral norm).  An all-zero matrix has rank 0.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite values")
    if not 0.0 < rel_threshold < 1.0:
        raise ValueError(f"rel_threshold must be in (0, 1), got {rel_threshold}")
    d = m.shape[0]
    sigma = np.linalg.svd(m, compute_uv=False)
    sigma_max = float(sigma[0])
    if sigma_max == 0.0:
        return RankInfo(0, 0.0, 0.0)
    rank = int(np.count_nonzero(sigma >= rel_threshold * sigma_max))
    return RankInfo(rank, rank / d, sigma_max)
