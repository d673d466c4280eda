"""Experiment harness: seeded embed/attack/detect trials, attack sweeps,
timestep and radius ablations, multi-key runs, and theory verification.

Every run is a pure function of the config; per-trial generators derive from
the master seed XOR the trial index plus a purpose tag, so results are
byte-reproducible and independent of execution order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackSpec, apply_attack
from .config import ExperimentConfig, build_key, build_model
from .diffusion import AnalyticDiffusion
from .metrics import consistency, roc
from .theory import verify_consistency, verify_detectability, verify_lemma
from .watermark import (
    channel_average,
    detect_latent,
    embed_multi,
    generate_key_set,
    watermark_image,
)

_SET_TAG = 101
_TRIAL_TAG = 7
_MULTI_KEY_TAG = 31

CSV_COLUMNS = ("attack", "auc", "tpr_at_1pct_fpr", "psnr_mean", "ssim_mean", "n")


def _rng(seed: int, trial: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed ^ trial, *tags])


def _generate_input(cfg: ExperimentConfig, model: AnalyticDiffusion, rng) -> np.ndarray:
    if cfg.scenario == "server":
        return rng.standard_normal(model.shape)
    return model.prior.sample(1, rng)[0]


@dataclass
class Trial:
    presented: np.ndarray
    negative: np.ndarray
    reference: np.ndarray


def _run_trial(cfg, model, key, trial: int) -> Trial:
    rng = _rng(cfg.seed, trial, _TRIAL_TAG)
    inp = _generate_input(cfg, model, rng)
    wm = watermark_image(inp, key, cfg.scenario, model, gamma=cfg.gamma)
    reference = inp if cfg.scenario == "user" else wm.x0_star
    return Trial(presented=wm.presented, negative=reference, reference=reference)


def _detect_eta(image, key, model) -> float:
    latent = model.ddim_run(image, 0, key.t_star)
    return detect_latent(latent, key).eta


def _averaging_context(cfg, model, key, set_size: int):
    wm_set = []
    clean_set = []
    for i in range(set_size):
        rng = _rng(cfg.seed, i, _SET_TAG)
        inp = _generate_input(cfg, model, rng)
        wm = watermark_image(inp, key, cfg.scenario, model, gamma=cfg.gamma)
        wm_set.append(wm.presented)
        clean_set.append(inp if cfg.scenario == "user" else wm.x0_star)
    return wm_set, clean_set


@dataclass
class AttackRow:
    attack: str
    auc: float
    tpr_at_1pct_fpr: float
    psnr_mean: float
    ssim_mean: float
    n: int


@dataclass
class EvalReport:
    rows: list[AttackRow]
    scores: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rows": [vars(r) for r in self.rows],
            "scores": {
                name: {"watermarked": list(map(float, wm)), "clean": list(map(float, cl))}
                for name, (wm, cl) in self.scores.items()
            },
        }


def csv_lines(rows: list[AttackRow]) -> list[str]:
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(
            f"{r.attack},{r.auc:.4f},{r.tpr_at_1pct_fpr:.4f},"
            f"{r.psnr_mean:.4f},{r.ssim_mean:.6f},{r.n}"
        )
    return lines


def run_eval(cfg: ExperimentConfig) -> EvalReport:
    """The full attack table: a clean row plus one row per configured attack.

    Positives are watermarked images, negatives the matching clean images;
    both populations pass through the same attack before detection.  The
    PSNR/SSIM columns compare the attacked watermarked image against the
    clean reference, so the clean row reports pure embedding consistency.
    """
    model = build_model(cfg)
    key = build_key(cfg, model)
    specs: list[tuple[str, AttackSpec | None]] = [("clean", None)]
    for doc in cfg.attacks:
        spec = AttackSpec.from_dict(doc)
        specs.append((spec.variant, spec))

    context = {}
    if any(s is not None and s.variant == "averaging" for _, s in specs):
        spec = next(s for _, s in specs if s is not None and s.variant == "averaging")
        wm_set, clean_set = _averaging_context(cfg, model, key, int(spec.get("set_size")))
        context = {"watermarked_set": wm_set, "clean_reference": clean_set}

    per_attack: dict[str, dict[str, list[float]]] = {
        name: {"wm": [], "clean": [], "psnr": [], "ssim": []} for name, _ in specs
    }
    for trial in range(cfg.trials):
        try:
            data = _run_trial(cfg, model, key, trial)
            for a_idx, (name, spec) in enumerate(specs):
                if spec is None:
                    pos, neg = data.presented, data.negative
                else:
                    pos = apply_attack(
                        data.presented, spec, _rng(cfg.seed, trial, _TRIAL_TAG, a_idx, 0),
                        model=model, **context,
                    )
                    neg = apply_attack(
                        data.negative, spec, _rng(cfg.seed, trial, _TRIAL_TAG, a_idx, 1),
                        model=model, **context,
                    )
                bucket = per_attack[name]
                bucket["wm"].append(_detect_eta(pos, key, model))
                bucket["clean"].append(_detect_eta(neg, key, model))
                p, s, _ = consistency(pos, data.reference)
                bucket["psnr"].append(p)
                bucket["ssim"].append(s)
        except Exception as exc:
            raise RuntimeError(f"trial {trial} failed: {exc}") from exc

    rows = []
    scores = {}
    for name, _ in specs:
        bucket = per_attack[name]
        curve = roc(bucket["wm"], bucket["clean"])
        rows.append(
            AttackRow(
                attack=name,
                auc=curve.auc,
                tpr_at_1pct_fpr=curve.tpr_at_1pct_fpr,
                psnr_mean=float(np.mean(bucket["psnr"])),
                ssim_mean=float(np.mean(bucket["ssim"])),
                n=cfg.trials,
            )
        )
        scores[name] = (bucket["wm"], bucket["clean"])
    return EvalReport(rows=rows, scores=scores)


@dataclass
class SweepRow:
    label: str
    value: float
    t_star: int
    mask_bins: int
    psnr_mean: float
    ssim_mean: float
    auc: float
    tpr_at_1pct_fpr: float
    n: int


def _sweep_point(cfg: ExperimentConfig, key, model) -> SweepRow:
    """Consistency against the clean reconstruction plus detection under the
    default additive-noise attack."""
    noise = AttackSpec("gaussian_noise")
    psnrs = []
    ssims = []
    wm_scores = []
    clean_scores = []
    for trial in range(cfg.trials):
        rng = _rng(cfg.seed, trial, _TRIAL_TAG)
        inp = _generate_input(cfg, model, rng)
        wm = watermark_image(inp, key, cfg.scenario, model, gamma=cfg.gamma)
        p, s, _ = consistency(wm.presented, wm.x0_star)
        psnrs.append(p)
        ssims.append(s)
        pos = apply_attack(wm.presented, noise, _rng(cfg.seed, trial, _TRIAL_TAG, 0, 0))
        neg = apply_attack(wm.x0_star, noise, _rng(cfg.seed, trial, _TRIAL_TAG, 0, 1))
        wm_scores.append(_detect_eta(pos, key, model))
        clean_scores.append(_detect_eta(neg, key, model))
    curve = roc(wm_scores, clean_scores)
    return SweepRow(
        label="",
        value=0.0,
        t_star=key.t_star,
        mask_bins=key.mask_count(),
        psnr_mean=float(np.mean(psnrs)),
        ssim_mean=float(np.mean(ssims)),
        auc=curve.auc,
        tpr_at_1pct_fpr=curve.tpr_at_1pct_fpr,
        n=cfg.trials,
    )


def sweep_timestep(cfg: ExperimentConfig, fractions: list[float]) -> list[SweepRow]:
    """Consistency/robustness across embedding steps; fraction 1 embeds in
    the initial noise."""
    rows = []
    for frac in fractions:
        if not 0.0 < frac <= 1.0:
            raise ValueError(f"fraction {frac} outside (0, 1]")
        point_cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "t_star_fraction": frac})
        model = build_model(point_cfg)
        key = build_key(point_cfg, model)
        row = _sweep_point(point_cfg, key, model)
        row.label = "t_star_fraction"
        row.value = frac
        rows.append(row)
    return rows


def sweep_radius(cfg: ExperimentConfig, radii: list[int]) -> list[SweepRow]:
    """Consistency/robustness trade-off as the mask disk grows."""
    seen = []
    for r in radii:
        if r in seen:
            warnings.warn(f"duplicate radius {r} dropped", stacklevel=2)
            continue
        seen.append(r)
    rows = []
    for radius in seen:
        point_cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "radius": int(radius)})
        model = build_model(point_cfg)
        key = build_key(point_cfg, model)
        row = _sweep_point(point_cfg, key, model)
        row.label = "radius"
        row.value = float(radius)
        rows.append(row)
    return rows


def sweep_csv_lines(rows: list[SweepRow]) -> list[str]:
    lines = ["label,value,t_star,mask_bins,psnr_mean,ssim_mean,auc,tpr_at_1pct_fpr,n"]
    for r in rows:
        lines.append(
            f"{r.label},{r.value:g},{r.t_star},{r.mask_bins},{r.psnr_mean:.4f},"
            f"{r.ssim_mean:.6f},{r.auc:.4f},{r.tpr_at_1pct_fpr:.4f},{r.n}"
        )
    return lines


@dataclass
class MultiKeyRow:
    n_keys: int
    mean_auc: float
    mean_tpr_at_1pct_fpr: float
    n: int


def run_multi_key(
    cfg: ExperimentConfig,
    key_counts: list[int],
    attack: AttackSpec | None = None,
) -> list[MultiKeyRow]:
    """Average per-key detection quality as one disk is split among keys."""
    if attack is None:
        attack = AttackSpec("gaussian_noise")
    model = build_model(cfg)
    rows = []
    for count in key_counts:
        keyset = generate_key_set(
            cfg.shape,
            channel=cfg.channel,
            radius=cfg.radius,
            t_star=cfg.t_star,
            n_keys=count,
            seed=cfg.seed ^ _MULTI_KEY_TAG,
            centered=cfg.centered,
            model=model,
            calibration=cfg.calibration,
        )
        t_star = keyset.keys[0].t_star
        per_key_wm: list[list[float]] = [[] for _ in range(count)]
        per_key_clean: list[list[float]] = [[] for _ in range(count)]
        for trial in range(cfg.trials):
            rng = _rng(cfg.seed, trial, _MULTI_KEY_TAG)
            inp = _generate_input(cfg, model, rng)
            res = embed_multi(inp, keyset, cfg.scenario, model)
            x0_star = model.ddim_run(res.latent, t_star, 0)
            presented = channel_average(res.x0_w, x0_star, cfg.gamma, cfg.channel)
            negative = inp if cfg.scenario == "user" else x0_star
            pos = apply_attack(
                presented, attack, _rng(cfg.seed, trial, _MULTI_KEY_TAG, 0, 0), model=model
            )
            neg = apply_attack(
                negative, attack, _rng(cfg.seed, trial, _MULTI_KEY_TAG, 0, 1), model=model
            )
            pos_latent = model.ddim_run(pos, 0, t_star)
            neg_latent = model.ddim_run(neg, 0, t_star)
            for i, key in enumerate(keyset):
                per_key_wm[i].append(detect_latent(pos_latent, key).eta)
                per_key_clean[i].append(detect_latent(neg_latent, key).eta)
        aucs = []
        tprs = []
        for i in range(count):
            curve = roc(per_key_wm[i], per_key_clean[i])
            aucs.append(curve.auc)
            tprs.append(curve.tpr_at_1pct_fpr)
        rows.append(
            MultiKeyRow(
                n_keys=count,
                mean_auc=float(np.mean(aucs)),
                mean_tpr_at_1pct_fpr=float(np.mean(tprs)),
                n=cfg.trials,
            )
        )
    return rows


def run_theory(cfg: ExperimentConfig) -> dict:
    """All five verifiers: both bounds plus the three concentration checks."""
    model = build_model(cfg)
    rng = np.random.default_rng([cfg.seed, 0x7E0])
    t = cfg.t_star
    reports = [
        verify_consistency(
            model, t, cfg.theory_lambda, cfg.theory_samples, rng, probes=cfg.theory_probes
        ),
        verify_detectability(
            model, t, cfg.theory_lambda, cfg.theory_samples, rng, probes=cfg.theory_probes
        ),
    ]
    lemma_rng = np.random.default_rng([cfg.seed, 0x1E3])
    matrix_rng = np.random.default_rng([cfg.seed, 0x3A7])
    j = matrix_rng.standard_normal((cfg.lemma_d, cfg.lemma_rank)) @ matrix_rng.standard_normal(
        (cfg.lemma_rank, cfg.lemma_d)
    )
    lemmas = [
        verify_lemma(1, cfg.lemma1_samples, lemma_rng, d=cfg.lemma1_d),
        verify_lemma(2, cfg.lemma2_samples, lemma_rng, matrix=j),
        verify_lemma(3, cfg.lemma3_samples, lemma_rng, matrix=j),
    ]
    failed = [r.name for r in reports if not r.passed and not r.inconclusive]
    failed += [r.name for r in lemmas if not r.passed]
    return {
        "bounds": [r.to_dict() for r in reports],
        "lemmas": [r.to_dict() for r in lemmas],
        "failed": failed,
        "inconclusive": [r.name for r in reports if r.inconclusive],
    }
