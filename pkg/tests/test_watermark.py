import numpy as np
import pytest

from ringmark import (
    AnalyticDiffusion,
    GaussianMixturePrior,
    MultiKeySet,
    NoiseSchedule,
    WatermarkKey,
    channel_average,
    detect,
    detect_latent,
    dft2,
    embed,
    embed_multi,
    generate_key,
    generate_key_set,
    identify,
    identify_latent,
    idft2,
    load_key,
    make_delta,
    save_key,
    watermark_image,
)

SHAPE = (2, 16, 16)


@pytest.fixture(scope="module")
def schedule():
    return NoiseSchedule.linear_beta()


@pytest.fixture(scope="module")
def model(schedule):
    return AnalyticDiffusion(GaussianMixturePrior.isotropic(SHAPE), schedule)


def unit_key(radius=4, channel=1, t_star=60, seed=0, **kw):
    return generate_key(SHAPE, channel, radius, t_star, seed, **kw)


class TestKeyGeneration:
    def test_radius_eight_has_eight_rings(self):
        key = generate_key((4, 16, 16), 3, 8, 60, seed=1)
        assert len(key.ring_values) == 8

    def test_mask_count_matches_exhaustive_lattice_count(self):
        key = generate_key((1, 64, 64), 0, 8, 60, seed=2)
        count = 0
        for i in range(64):
            for j in range(64):
                if np.hypot(i - 32, j - 32) < 8:
                    count += 1
        assert key.mask_count() == count

    def test_same_seed_is_bit_identical(self, model):
        a = generate_key(SHAPE, 1, 4, 60, seed=7, model=model)
        b = generate_key(SHAPE, 1, 4, 60, seed=7, model=model)
        assert a == b

    def test_radius_beyond_nyquist_disk_rejected(self):
        with pytest.raises(ValueError):
            generate_key(SHAPE, 1, 9, 60, seed=0)

    def test_calibrated_values_track_latent_energy(self, model):
        key = generate_key(SHAPE, 1, 4, 60, seed=3, model=model)
        # forward-noised unit-Gaussian latents have spectrum RMS near 1
        assert 0.05 < np.abs(key.ring_values).max() < 10.0

    def test_mask_is_strictly_monotone_in_radius(self):
        counts = [unit_key(radius=r).mask_count() for r in range(1, 9)]
        assert all(b > a for a, b in zip(counts, counts[1:]))

    def test_mask_has_hermitian_symmetry(self):
        m = unit_key(radius=5).mask()
        h, w = m.shape
        for i in range(h):
            for j in range(w):
                assert m[i, j] == m[(h - i) % h, (w - j) % w]


def naive_dft2(x):
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            for i in range(h):
                for j in range(w):
                    out[u, v] += x[i, j] * np.exp(
                        -2j * np.pi * (u * i / h + v * j / w)
                    )
    return out / np.sqrt(h * w)


def naive_idft2(spec):
    h, w = spec.shape
    out = np.zeros((h, w), dtype=complex)
    for i in range(h):
        for j in range(w):
            for u in range(h):
                for v in range(w):
                    out[i, j] += spec[u, v] * np.exp(
                        2j * np.pi * (u * i / h + v * j / w)
                    )
    return out / np.sqrt(h * w)


class TestMakeDelta:
    def test_noop_key_gives_zero_delta(self):
        rng = np.random.default_rng(0)
        key = unit_key(radius=3, seed=4)
        x = rng.standard_normal(SHAPE)
        x_w = x + make_delta(x, key)  # masked bins now equal the key exactly
        again = make_delta(x_w, key)
        assert np.max(np.abs(again)) < 1e-12

    def test_unmasked_spectrum_preserved_and_masked_overwritten(self):
        rng = np.random.default_rng(1)
        for seed in range(5):
            key = unit_key(radius=int(rng.integers(1, 9)), seed=seed)
            x = rng.standard_normal(SHAPE)
            x_w = x + make_delta(x, key)
            before = dft2(x[key.channel], centered=key.centered)
            after = dft2(x_w[key.channel], centered=key.centered)
            m = key.mask()
            assert np.max(np.abs(after[~m] - before[~m])) < 1e-10
            assert np.max(np.abs(after[m] - key.target()[m])) < 1e-10

    def test_delta_is_real_and_leaves_other_channels(self):
        key = unit_key(radius=4, channel=0, seed=5)
        x = np.random.default_rng(2).standard_normal(SHAPE)
        delta = make_delta(x, key)
        assert delta.dtype == np.float64
        assert np.all(delta[1] == 0.0)

    def test_small_grid_matches_direct_transform_oracle(self):
        shape = (1, 4, 4)
        key = WatermarkKey(shape, 0, 1, 10, ring_values=(0.7,))
        x = np.random.default_rng(3).standard_normal(shape)
        spec = naive_dft2(x[0])
        spec[2, 2] = 0.7  # the radius-1 disk is the single center bin
        expected = naive_idft2(spec).real - x[0]
        got = make_delta(x, key)
        assert np.max(np.abs(got[0] - expected)) < 1e-10

    def test_centered_variant_also_real(self):
        key = unit_key(radius=4, seed=6, centered=True)
        x = np.random.default_rng(4).standard_normal(SHAPE)
        x_w = x + make_delta(x, key)
        after = dft2(x_w[key.channel], centered=True)
        m = key.mask()
        assert np.max(np.abs(after[m] - key.target()[m])) < 1e-10


class TestEmbed:
    def test_noop_key_reduces_to_pure_round_trip(self, model, schedule):
        # Exact case: at t_star = T the server latent is the input itself, so
        # an input already carrying the key makes the write vanish entirely.
        rng = np.random.default_rng(5)
        key_top = unit_key(radius=3, seed=8, t_star=schedule.T)
        x_T = rng.standard_normal(SHAPE)
        x_keyed = x_T + make_delta(x_T, key_top)
        res = embed(x_keyed, key_top, "server", model)
        assert np.max(np.abs(res.latent_w - x_keyed)) < 1e-12
        round_trip_exact = model.ddim_run(x_keyed, schedule.T, 0)
        assert np.max(np.abs(res.x0_w - round_trip_exact)) < 1e-10

        # User case: the residual write is bounded by the inversion error,
        # which a broad prior makes negligible.
        broad = AnalyticDiffusion(
            GaussianMixturePrior.isotropic(SHAPE, std=50.0), schedule
        )
        key = unit_key(radius=3, seed=8)
        latent = broad.ddim_run(broad.prior.sample(1, rng)[0], 0, key.t_star)
        x0_keyed = broad.ddim_run(latent + make_delta(latent, key), key.t_star, 0)
        res = embed(x0_keyed, key, "user", broad)
        round_trip = broad.ddim_run(
            broad.ddim_run(x0_keyed, 0, key.t_star), key.t_star, 0
        )
        assert np.max(np.abs(res.latent_w - res.latent)) < 1e-4
        assert np.max(np.abs(res.x0_w - round_trip)) < 1e-4

    @pytest.mark.parametrize("scenario", ["user", "server"])
    def test_eta_zero_at_embed_latent(self, model, scenario):
        rng = np.random.default_rng(6)
        key = unit_key(radius=4, seed=9)
        inp = (
            rng.standard_normal(SHAPE)
            if scenario == "server"
            else model.prior.sample(1, rng)[0]
        )
        res = embed(inp, key, scenario, model)
        assert detect_latent(res.latent_w, key).eta <= 1e-8

    def test_t_star_outside_schedule_rejected(self, model):
        key = unit_key(t_star=500)
        with pytest.raises(ValueError):
            embed(np.zeros(SHAPE), key, "server", model)

    def test_unknown_scenario_rejected(self, model):
        with pytest.raises(ValueError):
            embed(np.zeros(SHAPE), unit_key(), "peer", model)

    def test_full_pipeline_separates_scores(self, schedule):
        # eta(watermarked) < eta(clean) on at least 99% of seeded trials.
        shape = (1, 16, 16)
        model = AnalyticDiffusion(GaussianMixturePrior.isotropic(shape), schedule)
        key = generate_key(shape, 0, 8, 60, seed=11, model=model)
        wins = 0
        trials = 200
        for trial in range(trials):
            rng = np.random.default_rng([trial, 23])
            x0 = model.prior.sample(1, rng)[0]
            wm = watermark_image(x0, key, "user", model)
            eta_wm = detect(wm.presented, key, model).eta
            eta_clean = detect(x0, key, model).eta
            wins += int(eta_wm < eta_clean)
        assert wins >= 0.99 * trials


class TestChannelAverage:
    def test_gamma_zero_is_identity(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal(SHAPE)
        b = rng.standard_normal(SHAPE)
        assert np.array_equal(channel_average(a, b, 0.0, 1), a)

    def test_gamma_one_copies_clean_channels(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal(SHAPE)
        b = rng.standard_normal(SHAPE)
        out = channel_average(a, b, 1.0, 1)
        assert np.array_equal(out[0], b[0])
        assert np.array_equal(out[1], a[1])

    def test_gamma_half_blends_constants(self):
        a = np.zeros(SHAPE)
        a[0] = 2.0
        b = np.zeros(SHAPE)
        b[0] = 4.0
        out = channel_average(a, b, 0.5, 1)
        assert np.all(out[0] == 3.0)

    def test_gamma_range_checked(self):
        with pytest.raises(ValueError):
            channel_average(np.zeros(SHAPE), np.zeros(SHAPE), 1.5, 0)


class TestDetect:
    def test_eta_counts_mask_when_key_doubles_spectrum(self):
        key = unit_key(radius=4, seed=12)
        rng = np.random.default_rng(9)
        x = rng.standard_normal(SHAPE)
        x_w = x + make_delta(x, key)  # masked bins = ring values
        doubled = WatermarkKey(
            SHAPE,
            key.channel,
            key.radius,
            key.t_star,
            ring_values=tuple(2 * v for v in key.ring_values),
        )
        out = detect_latent(x_w, doubled)
        assert out.eta == pytest.approx(key.mask_count(), rel=1e-10)

    def test_zero_masked_spectrum_is_degenerate(self):
        key = unit_key(radius=4, seed=13)
        latent = np.zeros(SHAPE)
        out = detect_latent(latent, key)
        assert out.degenerate
        assert np.isinf(out.eta)

    def test_eta_ignores_unmasked_bins(self):
        key = unit_key(radius=4, seed=14)
        rng = np.random.default_rng(10)
        x = rng.standard_normal(SHAPE)
        base = detect_latent(x, key).eta
        # a Hermitian perturbation supported strictly outside the mask
        spec = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        herm = np.empty_like(spec)
        for i in range(16):
            for j in range(16):
                herm[i, j] = 0.5 * (spec[i, j] + np.conj(spec[-i % 16, -j % 16]))
        herm[key.mask()] = 0.0
        bump, _ = idft2(herm)
        moved = x.copy()
        moved[key.channel] += bump
        assert detect_latent(moved, key).eta == pytest.approx(base, rel=1e-10)


class TestIdentify:
    def test_embedded_key_found_at_latent(self, model):
        keys = [unit_key(radius=4, seed=100 + i) for i in range(8)]
        rng = np.random.default_rng(11)
        x = rng.standard_normal(SHAPE)
        x_w = x + make_delta(x, keys[3])
        best, etas = identify_latent(x_w, keys)
        assert best == 3
        assert etas[3] <= 1e-8

    def test_tie_breaks_to_lowest_index(self):
        key = unit_key(radius=4, seed=15)
        x = np.random.default_rng(12).standard_normal(SHAPE)
        best, _ = identify_latent(x, [key, key])
        assert best == 0

    def test_empty_keys_rejected(self, model):
        with pytest.raises(ValueError):
            identify(np.zeros(SHAPE), [], model)

    def test_full_pipeline_identification_accuracy(self, schedule):
        shape = (1, 16, 16)
        model = AnalyticDiffusion(GaussianMixturePrior.isotropic(shape), schedule)
        keys = [generate_key(shape, 0, 8, 60, seed=200 + i, model=model) for i in range(16)]
        hits = 0
        trials = 100
        for trial in range(trials):
            rng = np.random.default_rng([trial, 29])
            x0 = model.prior.sample(1, rng)[0]
            true_idx = int(rng.integers(0, len(keys)))
            wm = watermark_image(x0, keys[true_idx], "user", model)
            best, _ = identify(wm.presented, keys, model)
            hits += int(best == true_idx)
        assert hits >= 0.90 * trials


class TestMultiKey:
    def test_sectors_partition_the_disk(self):
        keys = generate_key_set(SHAPE, 1, 6, 60, n_keys=5, seed=16)
        union = np.zeros((16, 16), dtype=int)
        for key in keys:
            assert key.mask_count() > 0
            union += key.mask()
        disk = unit_key(radius=6).mask()
        assert np.array_equal(union.astype(bool), disk)
        assert union.max() == 1

    def test_disjoint_sector_keys_all_detect_at_latent(self, model):
        keys = generate_key_set(SHAPE, 1, 6, 60, n_keys=2, seed=17, model=model)
        rng = np.random.default_rng(13)
        res = embed_multi(rng.standard_normal(SHAPE), keys, "server", model)
        for key in keys:
            assert detect_latent(res.latent_w, key).eta <= 1e-8

    def test_overlapping_keys_rejected(self):
        a = unit_key(radius=4, seed=18)
        b = unit_key(radius=4, seed=19)
        with pytest.raises(ValueError):
            MultiKeySet((a, b))

    def test_sector_deltas_stay_real(self, model):
        keys = generate_key_set(SHAPE, 1, 6, 60, n_keys=7, seed=20)
        rng = np.random.default_rng(14)
        x = rng.standard_normal(SHAPE)
        for key in keys:
            delta = make_delta(x, key)  # raises if a sector broke symmetry
            assert np.all(np.isfinite(delta))

    def test_too_many_sectors_rejected(self):
        with pytest.raises(ValueError):
            generate_key_set(SHAPE, 1, 1, 60, n_keys=3, seed=21)


class TestKeyIO:
    def test_round_trip_is_exact(self, tmp_path, model):
        key = generate_key(SHAPE, 1, 5, 60, seed=22, model=model)
        path = tmp_path / "key.json"
        save_key(key, path)
        assert load_key(path) == key

    def test_schema_fields(self, tmp_path):
        import json

        key = unit_key(radius=3, seed=23)
        path = tmp_path / "key.json"
        save_key(key, path)
        doc = json.loads(path.read_text())
        assert set(doc) == {
            "version",
            "C",
            "H",
            "W",
            "channel",
            "radius",
            "centered",
            "t_star",
            "seed",
            "ring_values",
        }
        assert doc["version"] == 1
        assert len(doc["ring_values"]) == 3

    def test_sector_keys_round_trip(self, tmp_path):
        keys = generate_key_set(SHAPE, 1, 6, 60, n_keys=3, seed=24)
        path = tmp_path / "sector.json"
        save_key(keys.keys[2], path)
        assert load_key(path) == keys.keys[2]
