"""Ring keys in the 2-D spectrum, watermark injection at an intermediate
diffusion step, and the normalized masked-spectrum detection statistic.

A key overwrites a disk (or an angular share of a disk) of DFT bins on one
channel with per-ring constants.  The disk sits at the array center, which
for an uncentered DFT is the high-frequency region.  Ring values are real and
constant per integer-radius ring, and the disk is closed under the Hermitian
reflection (i, j) -> (-i mod H, -j mod W), so the perturbation is always a
real image.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .diffusion import AnalyticDiffusion
from .numerics import as_image, dft2, idft2

USER = "user"
SERVER = "server"
_SCENARIOS = (USER, SERVER)


@lru_cache(maxsize=None)
def _disk_geometry(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Distance-from-center and integer ring index for every bin."""
    ii, jj = np.ogrid[0:h, 0:w]
    dist = np.sqrt((ii - h // 2) ** 2.0 + (jj - w // 2) ** 2.0)
    rings = np.floor(dist).astype(np.int64)
    dist.setflags(write=False)
    rings.setflags(write=False)
    return dist, rings


@lru_cache(maxsize=None)
def _sector_masks(h: int, w: int, radius: int, sectors: int) -> tuple[np.ndarray, ...]:
    """Partition the disk into ``sectors`` disjoint Hermitian-closed wedges.

    Bins are grouped into reflection pairs (a bin and its conjugate partner
    share an angle mod pi), pairs are sorted by that angle, and consecutive
    near-equal chunks of pairs form the sectors.  Keeping pairs together is
    what keeps each sector's perturbation real.
    """
    dist, _ = _disk_geometry(h, w)
    disk = dist < radius
    pairs = []
    seen = np.zeros((h, w), dtype=bool)
    for i, j in zip(*np.nonzero(disk)):
        if seen[i, j]:
            continue
        pi_, pj = (h - i) % h, (w - j) % w
        seen[i, j] = True
        seen[pi_, pj] = True
        theta = math.atan2(i - h // 2, j - w // 2) % math.pi
        pairs.append((theta, int(i), int(j), int(pi_), int(pj)))
    pairs.sort()
    if sectors > len(pairs):
        raise ValueError(
            f"cannot split {len(pairs)} reflection pairs into {sectors} sectors"
        )
    chunks = np.array_split(np.arange(len(pairs)), sectors)
    masks = []
    for chunk in chunks:
        m = np.zeros((h, w), dtype=bool)
        for idx in chunk:
            _, i, j, pi_, pj = pairs[idx]
            m[i, j] = True
            m[pi_, pj] = True
        m.setflags(write=False)
        masks.append(m)
    return tuple(masks)


@dataclass(frozen=True)
class WatermarkKey:
    """Geometry plus per-ring values; the mask is always derived, never stored.

    ``centered=False`` places the disk over the high frequencies of an
    unshifted DFT; ``centered=True`` selects the low-frequency variant.
    ``sector_count > 1`` restricts the key to its share of the disk so
    several keys can coexist without overlap.
    """

    shape: tuple[int, int, int]
    channel: int
    radius: int
    t_star: int
    ring_values: tuple[float, ...]
    seed: int = 0
    centered: bool = False
    sector_count: int = 1
    sector_index: int = 0

    def __post_init__(self):
        c, h, w = (int(s) for s in self.shape)
        if c < 1 or h < 2 or w < 2 or h % 2 or w % 2:
            raise ValueError(f"invalid key shape {self.shape}")
        if not 0 <= self.channel < c:
            raise ValueError(f"channel {self.channel} outside [0, {c})")
        if not 1 <= self.radius <= min(h, w) // 2:
            raise ValueError(
                f"radius {self.radius} outside [1, {min(h, w) // 2}] for {h}x{w}"
            )
        if len(self.ring_values) != self.radius:
            raise ValueError("need exactly one ring value per integer radius")
        if self.t_star < 1:
            raise ValueError("t_star must be a positive step index")
        if self.sector_count < 1 or not 0 <= self.sector_index < self.sector_count:
            raise ValueError("invalid sector indices")
        object.__setattr__(self, "shape", (c, h, w))
        object.__setattr__(self, "ring_values", tuple(float(v) for v in self.ring_values))

    def mask(self) -> np.ndarray:
        _, h, w = self.shape
        if self.sector_count == 1:
            dist, _ = _disk_geometry(h, w)
            m = dist < self.radius
            m.setflags(write=False)
            return m
        return _sector_masks(h, w, self.radius, self.sector_count)[self.sector_index]

    def mask_count(self) -> int:
        return int(np.count_nonzero(self.mask()))

    def target(self) -> np.ndarray:
        """Real H x W array holding the key values inside the mask."""
        _, h, w = self.shape
        _, rings = _disk_geometry(h, w)
        values = np.asarray(self.ring_values)
        out = np.zeros((h, w))
        m = self.mask()
        out[m] = values[rings[m]]
        return out


@dataclass(frozen=True)
class MultiKeySet:
    """Keys sharing shape/channel/t_star with pairwise disjoint masks."""

    keys: tuple[WatermarkKey, ...]

    def __post_init__(self):
        keys = tuple(self.keys)
        if not keys:
            raise ValueError("key set must not be empty")
        first = keys[0]
        for key in keys[1:]:
            if (
                key.shape != first.shape
                or key.channel != first.channel
                or key.t_star != first.t_star
                or key.centered != first.centered
            ):
                raise ValueError("keys in a set must share shape/channel/t_star")
        coverage = np.zeros(first.shape[1:], dtype=np.int64)
        for key in keys:
            coverage += key.mask()
        if np.any(coverage > 1):
            raise ValueError("key masks overlap")
        object.__setattr__(self, "keys", keys)

    def __len__(self) -> int:
        return len(self.keys)

    def __iter__(self):
        return iter(self.keys)


def ring_amplitude_scales(
    model: AnalyticDiffusion,
    channel: int,
    radius: int,
    t_star: int,
    rng: np.random.Generator,
    centered: bool = False,
    calibration: int = 64,
) -> np.ndarray:
    """Per-ring RMS of spectrum magnitudes over a forward-noised batch.

    Keys scaled this way carry energy commensurate with the latent spectrum
    at the embedding step instead of some arbitrary unit scale.
    """
    _, h, w = model.shape
    _, rings = _disk_geometry(h, w)
    power = np.zeros(radius)
    counts = np.zeros(radius)
    x0 = model.prior.sample(calibration, rng)
    for i in range(calibration):
        x_t = model.forward_noise(x0[i], t_star, rng)
        spec = dft2(x_t[channel], centered=centered)
        for r in range(radius):
            sel = rings == r
            power[r] += float(np.sum(np.abs(spec[sel]) ** 2))
            counts[r] += int(np.count_nonzero(sel))
    return np.sqrt(power / counts)


def generate_key(
    shape: tuple[int, int, int],
    channel: int,
    radius: int,
    t_star: int,
    seed: int,
    centered: bool = False,
    model: Optional[AnalyticDiffusion] = None,
    calibration: int = 64,
) -> WatermarkKey:
    """Draw one ring key; deterministic for a given seed.

    With a model, ring values are standard normal draws scaled by the
    calibrated per-ring RMS; without one the scale is 1.
    """
    _, h, w = (int(s) for s in shape)
    if not 1 <= radius <= min(h, w) // 2:
        raise ValueError(f"radius {radius} outside [1, {min(h, w) // 2}] for {h}x{w}")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(radius)
    if model is not None:
        if model.shape != tuple(shape):
            raise ValueError("model shape does not match the key shape")
        raw = raw * ring_amplitude_scales(
            model, channel, radius, t_star, rng, centered=centered, calibration=calibration
        )
    return WatermarkKey(
        shape=tuple(shape),
        channel=channel,
        radius=radius,
        t_star=t_star,
        ring_values=tuple(raw),
        seed=seed,
        centered=centered,
    )


def generate_key_set(
    shape: tuple[int, int, int],
    channel: int,
    radius: int,
    t_star: int,
    n_keys: int,
    seed: int,
    centered: bool = False,
    model: Optional[AnalyticDiffusion] = None,
    calibration: int = 64,
) -> MultiKeySet:
    """Generate ``n_keys`` keys over disjoint shares of one disk."""
    if n_keys < 1:
        raise ValueError("n_keys must be >= 1")
    rng = np.random.default_rng(seed)
    scales = np.ones(radius)
    if model is not None:
        scales = ring_amplitude_scales(
            model, channel, radius, t_star, rng, centered=centered, calibration=calibration
        )
    keys = []
    for i in range(n_keys):
        raw = rng.standard_normal(radius) * scales
        keys.append(
            WatermarkKey(
                shape=tuple(shape),
                channel=channel,
                radius=radius,
                t_star=t_star,
                ring_values=tuple(raw),
                seed=seed,
                centered=centered,
                sector_count=n_keys,
                sector_index=i,
            )
        )
    return MultiKeySet(tuple(keys))


def make_delta(x_t, key: WatermarkKey) -> np.ndarray:
    """Perturbation that overwrites masked bins with the key values.

    delta = IDFT(DFT(x) * (1-M) + target * M) - x on the key channel; all
    other channels are zero.  The result is real because the masked region
    and the ring-constant values respect Hermitian symmetry.
    """
    arr = as_image(x_t)
    if arr.shape != key.shape:
        raise ValueError(f"expected shape {key.shape}, got {arr.shape}")
    spec = dft2(arr[key.channel], centered=key.centered)
    m = key.mask()
    spec = np.where(m, key.target().astype(np.complex128), spec)
    replaced, _ = idft2(spec, centered=key.centered)
    delta = np.zeros_like(arr)
    delta[key.channel] = replaced - arr[key.channel]
    return delta


class EmbedResult(NamedTuple):
    x0_w: np.ndarray
    latent: np.ndarray
    latent_w: np.ndarray


def _latent_at_t(input_image, scenario: str, t: int, model: AnalyticDiffusion):
    if scenario not in _SCENARIOS:
        raise ValueError(f"scenario must be one of {_SCENARIOS}, got {scenario!r}")
    if not 1 <= t <= model.T:
        raise ValueError(f"t_star {t} outside the schedule [1, {model.T}]")
    arr = as_image(input_image)
    if scenario == USER:
        return model.ddim_run(arr, 0, t)
    return arr if t == model.T else model.ddim_run(arr, model.T, t)


def embed(
    input_image,
    key: WatermarkKey,
    scenario: str,
    model: AnalyticDiffusion,
) -> EmbedResult:
    """Inject the key at its embedding step and sample back to a clean image.

    User scenario: the input is a clean image, inverted up to t_star.
    Server scenario: the input is an initial noise tensor, sampled down to
    t_star.  Returns the watermarked image together with both latents.
    """
    latent = _latent_at_t(input_image, scenario, key.t_star, model)
    latent_w = latent + make_delta(latent, key)
    x0_w = model.ddim_run(latent_w, key.t_star, 0)
    return EmbedResult(x0_w=x0_w, latent=latent, latent_w=latent_w)


def embed_multi(
    input_image,
    keyset: MultiKeySet,
    scenario: str,
    model: AnalyticDiffusion,
) -> EmbedResult:
    """Embed every key of a disjoint set in a single latent visit."""
    first = keyset.keys[0]
    latent = _latent_at_t(input_image, scenario, first.t_star, model)
    spec = dft2(latent[first.channel], centered=first.centered)
    for key in keyset:
        m = key.mask()
        spec = np.where(m, key.target().astype(np.complex128), spec)
    replaced, _ = idft2(spec, centered=first.centered)
    latent_w = latent.copy()
    latent_w[first.channel] = replaced
    x0_w = model.ddim_run(latent_w, first.t_star, 0)
    return EmbedResult(x0_w=x0_w, latent=latent, latent_w=latent_w)


def channel_average(x0_w, x0_star, gamma: float, channel: int) -> np.ndarray:
    """Blend non-watermark channels toward the clean reconstruction.

    The watermark channel is kept as generated; every other channel becomes
    (1-gamma) watermarked + gamma clean.
    """
    a = as_image(x0_w)
    b = as_image(x0_star)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    out = (1.0 - gamma) * a + gamma * b
    out[channel] = a[channel]
    return out


@dataclass(frozen=True)
class DetectionOutcome:
    """Detection statistic; zero means the masked spectrum equals the key.

    ``degenerate`` flags an all-zero masked spectrum, reported as +inf.
    Smaller is more watermark-like: an image is declared watermarked when
    eta falls below a threshold chosen by the evaluation layer.
    """

    eta: float
    degenerate: bool = False


def detect_latent(latent, key: WatermarkKey) -> DetectionOutcome:
    """Detection statistic evaluated directly on an inverted latent."""
    arr = as_image(latent)
    if arr.shape != key.shape:
        raise ValueError(f"expected shape {key.shape}, got {arr.shape}")
    spec = dft2(arr[key.channel], centered=key.centered)
    m = key.mask()
    observed = spec[m]
    denom = float(np.sum(np.abs(observed) ** 2))
    if denom == 0.0:
        return DetectionOutcome(eta=math.inf, degenerate=True)
    diff = key.target()[m] - observed
    eta = float(np.count_nonzero(m)) * float(np.sum(np.abs(diff) ** 2)) / denom
    return DetectionOutcome(eta=eta)


def detect(image, key: WatermarkKey, model: AnalyticDiffusion) -> DetectionOutcome:
    """Invert the image to the embedding step and score the masked spectrum."""
    if not 1 <= key.t_star <= model.T:
        raise ValueError(f"t_star {key.t_star} outside the schedule [1, {model.T}]")
    latent = model.ddim_run(as_image(image), 0, key.t_star)
    return detect_latent(latent, key)


def identify_latent(
    latent, keys: Sequence[WatermarkKey]
) -> tuple[int, np.ndarray]:
    """Best-matching key for an already-inverted latent (ties -> lowest index)."""
    if len(keys) == 0:
        raise ValueError("key sequence must not be empty")
    etas = np.array([detect_latent(latent, key).eta for key in keys])
    return int(np.argmin(etas)), etas


def identify(
    image, keys: Sequence[WatermarkKey], model: AnalyticDiffusion
) -> tuple[int, np.ndarray]:
    """Score every key against one image, inverting once per distinct t_star."""
    if len(keys) == 0:
        raise ValueError("key sequence must not be empty")
    arr = as_image(image)
    latents: dict[int, np.ndarray] = {}
    etas = np.empty(len(keys))
    for i, key in enumerate(keys):
        if key.t_star not in latents:
            latents[key.t_star] = model.ddim_run(arr, 0, key.t_star)
        etas[i] = detect_latent(latents[key.t_star], key).eta
    return int(np.argmin(etas)), etas


class WatermarkedImage(NamedTuple):
    presented: np.ndarray
    x0_w: np.ndarray
    x0_star: np.ndarray
    latent: np.ndarray
    latent_w: np.ndarray


def watermark_image(
    input_image,
    key: WatermarkKey,
    scenario: str,
    model: AnalyticDiffusion,
    gamma: float = 1.0,
) -> WatermarkedImage:
    """Full injection pipeline including the clean reconstruction and blend."""
    res = embed(input_image, key, scenario, model)
    x0_star = model.ddim_run(res.latent, key.t_star, 0)
    presented = channel_average(res.x0_w, x0_star, gamma, key.channel)
    return WatermarkedImage(
        presented=presented,
        x0_w=res.x0_w,
        x0_star=x0_star,
        latent=res.latent,
        latent_w=res.latent_w,
    )


_KEY_VERSION = 1


def save_key(key: WatermarkKey, path) -> None:
    """Write the key as JSON; geometry only, the mask is always rederived.

    Ring values are rendered with 17 significant digits so they round-trip
    to the exact float64 bit patterns.
    """
    c, h, w = key.shape
    fields = [
        f'"version": {_KEY_VERSION}',
        f'"C": {c}',
        f'"H": {h}',
        f'"W": {w}',
        f'"channel": {key.channel}',
        f'"radius": {key.radius}',
        f'"centered": {"true" if key.centered else "false"}',
        f'"t_star": {key.t_star}',
        f'"seed": {key.seed}',
    ]
    if key.sector_count > 1:
        fields.append(f'"sector_count": {key.sector_count}')
        fields.append(f'"sector_index": {key.sector_index}')
    rings = ", ".join(f"{v:.17g}" for v in key.ring_values)
    fields.append(f'"ring_values": [{rings}]')
    Path(path).write_text("{" + ", ".join(fields) + "}\n", encoding="utf-8")


def load_key(path) -> WatermarkKey:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != _KEY_VERSION:
        raise ValueError(f"unsupported key file version {doc.get('version')!r}")
    return WatermarkKey(
        shape=(doc["C"], doc["H"], doc["W"]),
        channel=doc["channel"],
        radius=doc["radius"],
        t_star=doc["t_star"],
        ring_values=tuple(doc["ring_values"]),
        seed=doc["seed"],
        centered=doc["centered"],
        sector_count=doc.get("sector_count", 1),
        sector_index=doc.get("sector_index", 0),
    )
