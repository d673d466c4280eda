"""Frequency-ring watermarking for diffusion latents.

Keys overwrite a ring-structured disk of DFT bins on one channel of the
latent at an intermediate diffusion step; detection inverts the image back
to that step and scores the masked spectrum against the key.  The diffusion
model is an analytic Gaussian-mixture denoiser, which makes the supporting
consistency/detectability bounds numerically checkable.
"""

from .attacks import AttackSpec, apply_attack, averaging_attack, diffpure
from .config import (
    ExperimentConfig,
    build_key,
    build_model,
    build_prior,
    build_schedule,
)
from .diffusion import (
    AnalyticDiffusion,
    DenoiserEval,
    GaussianMixturePrior,
    MixtureComponent,
    NoiseSchedule,
    ddim_transition,
)
from .metrics import RocCurve, consistency, normalize01, psnr, roc, ssim
from .numerics import (
    ImaginaryResidualExceeded,
    RankInfo,
    as_image,
    dft2,
    idft2,
    numerical_rank,
    sample_unit_sphere,
)
from .theory import (
    BoundReport,
    LemmaReport,
    detectability_factor,
    g_fn,
    h_bound,
    verify_consistency,
    verify_detectability,
    verify_lemma,
)
from .watermark import (
    DetectionOutcome,
    EmbedResult,
    MultiKeySet,
    WatermarkKey,
    channel_average,
    detect,
    detect_latent,
    embed,
    embed_multi,
    generate_key,
    generate_key_set,
    identify,
    identify_latent,
    load_key,
    make_delta,
    save_key,
    watermark_image,
)

__all__ = [
    "AnalyticDiffusion",
    "AttackSpec",
    "BoundReport",
    "DenoiserEval",
    "DetectionOutcome",
    "EmbedResult",
    "ExperimentConfig",
    "GaussianMixturePrior",
    "ImaginaryResidualExceeded",
    "LemmaReport",
    "MixtureComponent",
    "MultiKeySet",
    "NoiseSchedule",
    "RankInfo",
    "RocCurve",
    "WatermarkKey",
    "apply_attack",
    "as_image",
    "averaging_attack",
    "build_key",
    "build_model",
    "build_prior",
    "build_schedule",
    "channel_average",
    "consistency",
    "ddim_transition",
    "detect",
    "detect_latent",
    "detectability_factor",
    "dft2",
    "diffpure",
    "embed",
    "embed_multi",
    "g_fn",
    "generate_key",
    "generate_key_set",
    "h_bound",
    "identify",
    "identify_latent",
    "idft2",
    "load_key",
    "make_delta",
    "normalize01",
    "numerical_rank",
    "psnr",
    "roc",
    "sample_unit_sphere",
    "save_key",
    "ssim",
    "verify_consistency",
    "verify_detectability",
    "verify_lemma",
    "watermark_image",
]

__version__ = "0.1.0"
