"""Dice, noise sweeps, Monte-Carlo uncertainty and the density summary."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aimcsim.analog import NoiseConfig
from aimcsim.errors import ConfigError, ShapeError
from aimcsim.evalx import (
    UncertaintyMap,
    dataset_dice,
    dice,
    mc_uncertainty,
    mc_uncertainty_batch,
    noise_sweep,
    uncertainty_density,
)
from aimcsim.experiments import DataProfile, train_preset
from aimcsim.network import forward

IDEAL = NoiseConfig.ideal()
masks = arrays(np.bool_, st.tuples(st.integers(1, 6), st.integers(1, 6)))


@pytest.fixture(scope="module")
def trained():
    """A briefly trained toy U-Net on a small 16x16 profile, plus its test split."""
    train, test = DataProfile(n_train=32, n_test=12, h=16, w=16, seed=5).load()
    net, _ = train_preset("toy_unet", train, seed=1, epochs=12)
    return net, test


class TestDice:
    def test_identical(self):
        m = np.zeros((4, 4), bool)
        m[1:3, 1:3] = True
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), bool)
        b = np.zeros((4, 4), bool)
        a[0, 0], b[3, 3] = True, True
        assert dice(a, b) == 0.0

    def test_half_overlap_closed_form(self):
        t = np.ones((6, 8), bool)
        p = np.zeros_like(t)
        p[:, :4] = True
        assert dice(p, t) == 2 / 3

    def test_both_empty(self):
        assert dice(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dice(np.zeros((2, 2)), np.zeros((2, 3)))

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_symmetry_and_permutation(self, data):
        a = data.draw(masks)
        b = data.draw(arrays(np.bool_, a.shape))
        perm = np.random.default_rng(data.draw(st.integers(0, 2 ** 32 - 1))).permutation(a.size)
        d = dice(a, b)
        assert d == dice(b, a)
        assert d == dice(a.ravel()[perm], b.ravel()[perm])
        assert 0.0 <= d <= 1.0
        assert (d == 1.0) == bool(np.array_equal(a, b))
        if a.any() and b.any():
            assert (d == 0.0) == (not np.any(a & b))

    def test_dataset_dice_threshold(self):
        probs = np.array([[[0.6, 0.4]], [[0.5, 0.9]]])
        ms = np.array([[[1, 0]], [[0, 1]]])
        # 0.5 is not above the threshold
        assert dataset_dice(probs, ms) == 1.0


class TestNoiseSweep:
    def test_zero_row_equals_digital_under_ideal_converters(self, trained):
        net, (x, m) = trained
        res = noise_sweep(net, (x, m), [0.0, 0.1], 4, IDEAL)
        d = dataset_dice(forward(net, x)[:, 0], m)
        assert res.row(0.0).mean_dice == d
        assert res.row(0.0).std_dice == 0.0
        assert res.row(0.0).dice_drop == 0.0

    def test_largest_sigma_not_better(self, trained):
        net, data = trained
        res = noise_sweep(net, data, [0.0, 0.05, 0.2], 20, NoiseConfig(), seed=3)
        assert res.row(0.2).mean_dice <= res.row(0.0).mean_dice
        for r in res.rows:
            assert 0.0 <= r.mean_dice <= 1.0 and r.n_seeds == 20

    def test_doubling_seeds_consistent(self, trained):
        net, data = trained
        sig = [0.0, 0.05, 0.1]
        a = noise_sweep(net, data, sig, 10, NoiseConfig(), seed=9)
        b = noise_sweep(net, data, sig, 20, NoiseConfig(), seed=9)
        for ra, rb in zip(a.rows, b.rows):
            assert abs(rb.mean_dice - ra.mean_dice) <= max(2 * ra.std_dice / np.sqrt(10), 1e-12)

    def test_deterministic_and_thread_independent(self, trained):
        net, data = trained
        a = noise_sweep(net, data, [0.0, 0.1], 3, NoiseConfig(), seed=1, threads=1)
        b = noise_sweep(net, data, [0.0, 0.1], 3, NoiseConfig(), seed=1, threads=3)
        assert a.as_table() == b.as_table()

    @pytest.mark.parametrize("sigmas", [[0.1, 0.2], [0.0, 0.2, 0.1], [], [0.0, 0.0]])
    def test_invalid_sigmas(self, trained, sigmas):
        net, data = trained
        with pytest.raises(ConfigError):
            noise_sweep(net, data, sigmas, 2)


class TestUncertainty:
    def test_noise_free_gives_zero_map(self, trained):
        net, (x, _) = trained
        for cfg in (IDEAL, NoiseConfig(sigma_prog=0.0, sigma_out=0.0)):
            u = mc_uncertainty(net, x[0], 5, cfg)
            np.testing.assert_array_equal(u.std, 0.0)

    def test_fixed_programming_without_output_noise_is_zero(self, trained):
        net, (x, _) = trained
        cfg = NoiseConfig(sigma_prog=0.2, sigma_out=0.0, seed_policy="fixed-per-programming")
        np.testing.assert_array_equal(mc_uncertainty(net, x[0], 6, cfg).std, 0.0)

    def test_bounded_and_monotone_in_sigma(self, trained):
        net, (x, _) = trained
        lo = mc_uncertainty(net, x[0], 20, NoiseConfig(sigma_prog=0.02), seed=4)
        hi = mc_uncertainty(net, x[0], 20, NoiseConfig(sigma_prog=0.1), seed=4)
        assert np.all(hi.std >= 0) and np.all(hi.std <= 0.5)
        assert hi.mean > lo.mean
        assert hi.std.shape == x[0, 0].shape and hi.n_samples == 20

    def test_batch_is_thread_independent(self, trained):
        net, (x, _) = trained
        cfg = NoiseConfig(sigma_prog=0.05)
        maps = mc_uncertainty_batch(net, x[:3], 4, cfg, seed=2)
        assert len(maps) == 3 and all(m.std.shape == (16, 16) for m in maps)
        again = mc_uncertainty_batch(net, x[:3], 4, cfg, seed=2, threads=2)
        for a, b in zip(maps, again):
            assert a.std.tobytes() == b.std.tobytes()

    def test_needs_two_samples(self, trained):
        net, (x, _) = trained
        with pytest.raises(ConfigError):
            mc_uncertainty(net, x[0], 1)


class TestDensity:
    def test_all_zero_point_mass(self):
        d = uncertainty_density([UncertaintyMap(np.zeros((4, 4)), 5)] * 3)
        assert d.mass[0] == 1.0 and d.mass[1:].sum() == 0.0
        assert d.mean == 0.0 and d.median == 0.0 and d.p95 == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 100), st.integers(0, 2 ** 32 - 1))
    def test_mass_sums_to_one(self, n_maps, n_bins, seed):
        rng = np.random.default_rng(seed)
        maps = [UncertaintyMap(rng.uniform(0, 0.5, (5, 7)), 3) for _ in range(n_maps)]
        d = uncertainty_density(maps, n_bins)
        assert abs(d.mass.sum() - 1.0) <= 1e-12
        assert len(d.mass) == n_bins and d.edges[0] == 0.0 and d.edges[-1] == 0.5
        np.testing.assert_allclose(np.sum(d.density * np.diff(d.edges)), 1.0, rtol=1e-12)

    def test_summary_statistics(self):
        vals = np.linspace(0, 0.4, 20).reshape(4, 5)
        d = uncertainty_density([UncertaintyMap(vals, 2)])
        assert d.summary() == {"mean": pytest.approx(0.2), "median": pytest.approx(0.2),
                               "p95": pytest.approx(np.percentile(vals, 95))}

    def test_errors(self):
        with pytest.raises(ConfigError):
            uncertainty_density([])
        with pytest.raises(ShapeError):
            uncertainty_density([UncertaintyMap(np.zeros((2, 2)), 2),
                                 UncertaintyMap(np.zeros((3, 2)), 2)])
