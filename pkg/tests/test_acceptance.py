"""Acceptance gate: every criterion runs at its stated tolerance and prints
one pass/fail line (visible with ``pytest -s``)."""

import math
import time

import numpy as np
import pytest

from ringmark import (
    AnalyticDiffusion,
    ExperimentConfig,
    GaussianMixturePrior,
    NoiseSchedule,
    detect_latent,
    dft2,
    embed,
    generate_key,
    roc,
    verify_consistency,
    verify_detectability,
    verify_lemma,
)
from ringmark.cli import main
from ringmark.evaluate import run_eval, run_multi_key, sweep_radius, sweep_timestep


class Gate:
    """Times a criterion and prints its verdict line."""

    def __init__(self, number: int, label: str, budget_s: float):
        self.number = number
        self.label = label
        self.budget = budget_s

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        verdict = "PASS" if exc_type is None else "FAIL"
        print(f"[criterion {self.number:02d}] {self.label}: {verdict} ({elapsed:.1f}s)")
        assert elapsed < self.budget, f"runtime {elapsed:.1f}s over budget {self.budget}s"
        return False


@pytest.fixture(scope="module")
def schedule():
    return NoiseSchedule.linear_beta()


@pytest.fixture(scope="module")
def rank8_mixture(schedule):
    prior = GaussianMixturePrior.random_low_rank(
        (1, 16, 16), rank=8, rng=np.random.default_rng(3), n_components=2, tau=1e-3
    )
    return AnalyticDiffusion(prior, schedule)


def test_criterion_01_construction_invariance():
    with Gate(1, "construction invariance of the masked write", 5.0):
        rng = np.random.default_rng(1001)
        for trial in range(100):
            c = int(rng.integers(1, 4))
            shape = (c, 16, 16)
            key = generate_key(
                shape,
                channel=int(rng.integers(0, c)),
                radius=int(rng.integers(1, 9)),
                t_star=60,
                seed=int(rng.integers(0, 2**31)),
                centered=bool(rng.integers(0, 2)),
            )
            x = rng.standard_normal(shape)
            from ringmark import make_delta

            x_w = x + make_delta(x, key)
            before = dft2(x[key.channel], centered=key.centered)
            after = dft2(x_w[key.channel], centered=key.centered)
            m = key.mask()
            assert np.max(np.abs(after[~m] - before[~m])) <= 1e-10
            assert np.max(np.abs(after[m] - key.target()[m])) <= 1e-10


def test_criterion_02_zero_statistic_at_source():
    with Gate(2, "detection statistic is zero at the embed latent", 5.0):
        shape = (2, 8, 8)
        sched = NoiseSchedule.linear_beta(40, 1e-4, 0.4)
        model = AnalyticDiffusion(GaussianMixturePrior.isotropic(shape), sched)
        rng = np.random.default_rng(1002)
        for trial in range(50):
            key = generate_key(
                shape,
                channel=int(rng.integers(0, 2)),
                radius=int(rng.integers(1, 5)),
                t_star=12,
                seed=int(rng.integers(0, 2**31)),
            )
            for scenario in ("user", "server"):
                inp = (
                    rng.standard_normal(shape)
                    if scenario == "server"
                    else model.prior.sample(1, rng)[0]
                )
                res = embed(inp, key, scenario, model)
                assert detect_latent(res.latent_w, key).eta <= 1e-8


def test_criterion_03_clean_pipeline_perfect_roc():
    with Gate(3, "clean pipeline reaches AUC 1.00 and TPR@1%FPR 1.00", 120.0):
        cfg = ExperimentConfig(trials=200, attacks=[], seed=42)
        report = run_eval(cfg)
        row = report.rows[0]
        assert row.attack == "clean"
        assert row.n == 200
        assert row.auc == 1.0
        assert row.tpr_at_1pct_fpr == 1.0


def test_criterion_04_consistency_bound(rank8_mixture):
    with Gate(4, "consistency bound violation rate within nominal", 120.0):
        for lam in (0.1, 1.0):
            rep = verify_consistency(
                rank8_mixture, 60, lam, 2000, np.random.default_rng(1004)
            )
            assert rep.details["rank"] == 8
            nominal = 1 / 8
            se = math.sqrt(nominal * (1 - nominal) / 2000)
            assert rep.violation_rate <= nominal + 3 * se
            assert rep.passed and not rep.inconclusive


def test_criterion_05_detectability_bound(rank8_mixture):
    with Gate(5, "detectability bound violation rate within nominal", 180.0):
        rep = verify_detectability(
            rank8_mixture, 60, 1.0, 2000, np.random.default_rng(1005)
        )
        r_t = rep.details["rank_t"]
        r_prev = rep.details["rank_prev"]
        nominal = 1 / r_t + 1 / r_prev
        se = math.sqrt(nominal * (1 - nominal) / 2000)
        assert rep.violation_rate <= nominal + 3 * se
        assert rep.passed and not rep.inconclusive


def test_criterion_06_lemma_checks():
    with Gate(6, "concentration lemmas 1-3", 60.0):
        rng = np.random.default_rng(1006)
        rep1 = verify_lemma(1, 100_000, rng, d=64)
        assert abs(rep1.observed - 1 / 64) <= 5e-3

        mrng = np.random.default_rng(1007)
        j = mrng.standard_normal((32, 3)) @ mrng.standard_normal((3, 32))
        rep2 = verify_lemma(2, 50_000, rng, matrix=j)
        assert abs(rep2.observed - rep2.expected) / rep2.expected <= 0.02

        rep3 = verify_lemma(3, 10_000, rng, matrix=j)
        stated = rep3.details["stated_constant"]
        assert rep3.observed <= stated * (1 + 1e-6)
        assert rep3.observed >= 0.95 * stated  # comfortably above 1.9 |J|^2
        assert rep3.observed >= 1.9 * stated / 2.0


def test_criterion_07_jacobian_oracle(schedule):
    with Gate(7, "analytic Jacobian matches central differences", 60.0):
        prior = GaussianMixturePrior.random_low_rank(
            (1, 8, 8), rank=3, rng=np.random.default_rng(1008), n_components=2, tau=1e-3
        )
        model = AnalyticDiffusion(prior, schedule)
        rng = np.random.default_rng(1009)
        for _ in range(20):
            t = int(rng.integers(1, schedule.T + 1))
            x = model.forward_noise(prior.sample(1, rng)[0], t, rng)
            ja = model.jacobian(x, t)
            jf = model.jacobian(x, t, mode="finite_difference", step=1e-5)
            assert np.linalg.norm(ja - jf) / np.linalg.norm(ja) <= 1e-5


def test_criterion_08_roc_oracle():
    with Gate(8, "trapezoid AUC equals pairwise counting", 5.0):
        rng = np.random.default_rng(1010)
        for trial in range(50):
            n = 100
            if trial % 4 == 0:
                wm = rng.integers(0, 12, n).astype(float)
                clean = rng.integers(0, 12, n).astype(float)
            else:
                wm = rng.standard_normal(n)
                clean = rng.standard_normal(n) + rng.uniform(-1, 1)
            wins = 0.0
            for a in wm:
                for b in clean:
                    wins += 1.0 if a < b else (0.5 if a == b else 0.0)
            assert roc(wm, clean).auc == pytest.approx(wins / (n * n), abs=1e-12)


def test_criterion_09_timestep_ablation_direction():
    with Gate(9, "mid-step embedding beats initial-noise embedding", 300.0):
        # The timestep effect rides on the denoiser's low-dimensional range,
        # so the sweep runs on a low-rank prior with a floor large enough to
        # keep detection alive.
        cfg = ExperimentConfig(
            trials=200,
            seed=7,
            prior_kind="low_rank",
            prior_rank=8,
            prior_tau=0.1,
            prior_scale=3.0,
        )
        rows = sweep_timestep(cfg, [0.3, 1.0])
        mid, deep = rows[0], rows[1]
        assert mid.psnr_mean > deep.psnr_mean
        assert mid.tpr_at_1pct_fpr >= deep.tpr_at_1pct_fpr


def test_criterion_10_radius_tradeoff_direction():
    with Gate(10, "radius sweep trades consistency for robustness", 300.0):
        cfg = ExperimentConfig(trials=200, seed=8)
        rows = sweep_radius(cfg, [2, 4, 8])
        psnrs = [r.psnr_mean for r in rows]
        tprs = [r.tpr_at_1pct_fpr for r in rows]
        assert psnrs[0] > psnrs[1] > psnrs[2]
        assert tprs[0] <= tprs[1] <= tprs[2]


def test_criterion_11_eval_determinism(tmp_path):
    with Gate(11, "byte-identical evaluation reports", 60.0):
        import contextlib
        import io

        args = [
            "eval",
            "--seed",
            "21",
            "--trials",
            "6",
            "--set",
            'attacks=[{"variant":"gaussian_noise"}]',
        ]
        a = tmp_path / "a"
        b = tmp_path / "b"
        with contextlib.redirect_stdout(io.StringIO()):
            assert main(args + ["--out", str(a)]) == 0
            assert main(args + ["--out", str(b)]) == 0
        assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()


def test_criterion_12_multi_key_direction():
    with Gate(12, "per-key detection does not improve with more keys", 600.0):
        cfg = ExperimentConfig(trials=100, seed=9)
        rows = run_multi_key(cfg, [2, 8, 32])
        tprs = [r.mean_tpr_at_1pct_fpr for r in rows]
        assert tprs[0] >= tprs[1] >= tprs[2]
