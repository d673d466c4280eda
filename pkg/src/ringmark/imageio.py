"""Tensor persistence as 16-bit grayscale PNGs, one file per channel, with a
JSON sidecar recording the per-channel affine map back to latent range."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .numerics import as_image

_VERSION = 1
_U16_MAX = 65535


def save_image(x, prefix) -> Path:
    """Write ``<prefix>_c<k>.png`` per channel plus ``<prefix>.json``.

    Each channel is min-max quantized to uint16; the sidecar stores the
    offset/scale pairs needed to restore latent values.
    """
    arr = as_image(x)
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    c, h, w = arr.shape
    offsets = []
    scales = []
    files = []
    for k in range(c):
        lo = float(arr[k].min())
        hi = float(arr[k].max())
        scale = (hi - lo) / _U16_MAX if hi > lo else 1.0
        quantized = np.round((arr[k] - lo) / scale).astype(np.uint16)
        name = f"{prefix.name}_c{k}.png"
        Image.fromarray(quantized).save(prefix.parent / name)
        offsets.append(lo)
        scales.append(scale)
        files.append(name)
    sidecar = prefix.with_suffix(".json")
    sidecar.write_text(
        json.dumps(
            {
                "version": _VERSION,
                "channels": c,
                "height": h,
                "width": w,
                "offsets": offsets,
                "scales": scales,
                "files": files,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return sidecar


def load_image(prefix) -> np.ndarray:
    """Inverse of :func:`save_image`; accepts the prefix or the sidecar path."""
    path = Path(prefix)
    sidecar = path if path.suffix == ".json" else path.with_suffix(".json")
    doc = json.loads(sidecar.read_text(encoding="utf-8"))
    if doc.get("version") != _VERSION:
        raise ValueError(f"unsupported image bundle version {doc.get('version')!r}")
    c, h, w = doc["channels"], doc["height"], doc["width"]
    out = np.empty((c, h, w))
    for k in range(c):
        raw = np.asarray(
            Image.open(sidecar.parent / doc["files"][k]), dtype=np.float64
        )
        if raw.shape != (h, w):
            raise ValueError(f"channel {k} has shape {raw.shape}, expected {(h, w)}")
        out[k] = raw * doc["scales"][k] + doc["offsets"][k]
    return out
