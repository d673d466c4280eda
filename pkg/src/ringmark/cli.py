"""Command-line front end.

Subcommands: keygen, embed, detect, eval, sweep-timestep, sweep-radius,
verify-theory.  Every command is a pure function of (config, master seed);
re-running overwrites outputs byte-identically.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluate
from .config import ExperimentConfig, build_key, build_model
from .imageio import load_image, save_image
from .plots import line_plot
from .watermark import detect, load_key, save_key, watermark_image


def _load_config(args) -> ExperimentConfig:
    cfg = (
        ExperimentConfig.from_file(args.config)
        if args.config
        else ExperimentConfig()
    )
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.trials is not None:
        overrides.append(f"trials={args.trials}")
    if args.out is not None:
        overrides.append(f'out_dir="{args.out}"')
    return cfg.with_overrides(overrides)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_text(path: Path, lines: list[str]) -> None:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_keygen(args) -> int:
    cfg = _load_config(args)
    model = build_model(cfg)
    key = build_key(cfg, model)
    out_path = Path(args.key_out) if args.key_out else _out_dir(cfg) / "key.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_key(key, out_path)
    digest = hashlib.sha256(out_path.read_bytes()).hexdigest()[:8]
    print(f"wrote {out_path} fingerprint {digest}")
    return 0


def cmd_embed(args) -> int:
    cfg = _load_config(args)
    model = build_model(cfg)
    key = load_key(args.key) if args.key else build_key(cfg, model)
    if args.input:
        inp = load_image(args.input)
    else:
        rng = np.random.default_rng(cfg.seed)
        inp = (
            rng.standard_normal(model.shape)
            if cfg.scenario == "server"
            else model.prior.sample(1, rng)[0]
        )
    wm = watermark_image(inp, key, cfg.scenario, model, gamma=cfg.gamma)
    out = _out_dir(cfg)
    save_image(wm.presented, out / "watermarked")
    save_image(wm.x0_star, out / "clean_reconstruction")
    print(f"wrote {out / 'watermarked.json'} and {out / 'clean_reconstruction.json'}")
    return 0


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    model = build_model(cfg)
    key = load_key(args.key) if args.key else build_key(cfg, model)
    image = load_image(args.input)
    outcome = detect(image, key, model)
    print(f"eta {outcome.eta:.6g} degenerate {outcome.degenerate}")
    if args.threshold is not None:
        print(f"watermarked {bool(outcome.eta < args.threshold)}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    report = evaluate.run_eval(cfg)
    out = _out_dir(cfg)
    _write_text(out / "report.csv", evaluate.csv_lines(report.rows))
    _write_json(out / "report.json", {"config": cfg.to_dict(), **report.to_dict()})
    for line in evaluate.csv_lines(report.rows):
        print(line)
    if args.plots:
        series = {}
        for name, (wm, cl) in report.scores.items():
            curve = evaluate.roc(wm, cl)
            series[name] = list(zip(map(float, curve.fpr), map(float, curve.tpr)))
        line_plot(out / "roc.svg", series, "ROC by attack", "FPR", "TPR")
    return 0


def _run_sweep(args, kind: str) -> int:
    cfg = _load_config(args)
    if kind == "timestep":
        values = [float(v) for v in args.values]
        rows = evaluate.sweep_timestep(cfg, values)
        stem = "sweep_timestep"
    else:
        values = [int(v) for v in args.values]
        rows = evaluate.sweep_radius(cfg, values)
        stem = "sweep_radius"
    out = _out_dir(cfg)
    lines = evaluate.sweep_csv_lines(rows)
    _write_text(out / f"{stem}.csv", lines)
    _write_json(out / f"{stem}.json", {"config": cfg.to_dict(), "rows": [vars(r) for r in rows]})
    for line in lines:
        print(line)
    if args.plots and rows:
        line_plot(
            out / f"{stem}.svg",
            {
                "psnr": [(r.value, r.psnr_mean) for r in rows],
                "tpr@1%fpr": [(r.value, r.tpr_at_1pct_fpr) for r in rows],
            },
            f"{stem} sweep",
            rows[0].label,
            "value",
        )
    return 0


def cmd_verify_theory(args) -> int:
    cfg = _load_config(args)
    if cfg.theory_samples < 1 or cfg.lemma1_samples < 1:
        raise ValueError("sample counts must be >= 1")
    result = evaluate.run_theory(cfg)
    out = _out_dir(cfg)
    _write_json(out / "theory.json", result)
    for doc in result["bounds"]:
        status = (
            "INCONCLUSIVE"
            if doc["inconclusive"]
            else ("pass" if doc["passed"] else "FAIL")
        )
        print(
            f"{doc['name']}: bound {doc['bound']:.6g} lhs_max {doc['lhs_max']:.6g} "
            f"violation_rate {doc['violation_rate']:.4f} "
            f"nominal {doc['nominal_failure']:.4f} [{status}]"
        )
    for doc in result["lemmas"]:
        status = "pass" if doc["passed"] else "FAIL"
        print(
            f"{doc['name']}: observed {doc['observed']:.6g} expected "
            f"{doc['expected']:.6g} error {doc['error']:.3g} [{status}]"
        )
    if result["inconclusive"]:
        print(f"warning: inconclusive reports {result['inconclusive']}")
    return 1 if result["failed"] else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ringmark",
        description="Frequency-ring watermarks for diffusion latents: key "
        "management, embedding, detection, robustness evaluation, ablation "
        "sweeps, and bound verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--trials", type=int, help="trial count override")
        p.add_argument("--out", help="output directory override")
        p.add_argument(
            "--set",
            action="append",
            metavar="FIELD=VALUE",
            help="config field override (value parsed as JSON)",
        )
        p.add_argument("--plots", action="store_true", help="also emit SVG plots")

    p = sub.add_parser("keygen", help="generate and write a key file")
    common(p)
    p.add_argument("--key-out", help="key file path (default <out>/key.json)")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("embed", help="watermark one image (or a seeded input)")
    common(p)
    p.add_argument("--key", help="key file; defaults to the config-derived key")
    p.add_argument("--input", help="input image bundle prefix")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("detect", help="score one image bundle against a key")
    common(p)
    p.add_argument("--key", help="key file; defaults to the config-derived key")
    p.add_argument("--input", required=True, help="image bundle prefix")
    p.add_argument("--threshold", type=float, help="decision threshold")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="attack table: AUC / TPR@1%%FPR / PSNR / SSIM")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-timestep", help="embedding-step ablation")
    common(p)
    p.add_argument("values", nargs="+", help="t* fractions in (0, 1]")
    p.set_defaults(func=lambda a: _run_sweep(a, "timestep"))

    p = sub.add_parser("sweep-radius", help="mask-radius trade-off sweep")
    common(p)
    p.add_argument("values", nargs="*", default=[], help="disk radii in bins")
    p.set_defaults(func=lambda a: _run_sweep(a, "radius"))

    p = sub.add_parser("verify-theory", help="run the bound and lemma checks")
    common(p)
    p.set_defaults(func=cmd_verify_theory)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
