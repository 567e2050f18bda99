"""Partition kernel construction, LC/FS measurements and mass-weight tests."""

import numpy as np
import pytest

from tubeflow.kernels import (
    CalibrationError,
    EnsembleSpec,
    KernelBuildError,
    NumericalIntegrityError,
    build_kernel,
    calibrate_tau,
    cube_neighborhood_sum,
    mass_weights,
    site_correlations,
    verify_fs,
    verify_kernel_lemmas,
    verify_lc,
)
from tubeflow.schrodinger import FrequencyWindow, Grid, WaveField, make_band_limited, mass


@pytest.fixture(scope="module")
def grid():
    return Grid(1, 16.0, 128)


@pytest.fixture(scope="module")
def kernel(grid):
    return build_kernel(grid, R=2.0)


@pytest.fixture(scope="module")
def unit_field(grid):
    return make_band_limited(grid, FrequencyWindow((0.0,), 1.0), "random-phase", seed=5)


class TestBuildKernel:
    def test_partition_of_unity_everywhere(self, kernel):
        total = kernel.partition_sum()
        assert np.max(np.abs(total - 1.0)) < 1e-10

    def test_partition_of_unity_at_random_points(self, kernel, grid):
        rng = np.random.default_rng(0)
        idx = rng.integers(0, grid.M, size=100)
        total = kernel.partition_sum()
        assert np.all(np.abs(total[idx] - 1.0) < 1e-10)

    def test_positive_everywhere(self, kernel):
        assert np.all(kernel.values > 0.0)

    def test_even_symmetry(self, kernel):
        values = kernel.values
        flipped = np.roll(values[::-1], 1)
        assert np.max(np.abs(values - flipped)) < 1e-12

    def test_decay_envelope_bounded(self, kernel):
        assert 0.0 < kernel.decay_lo <= kernel.decay_hi < np.inf

    def test_unit_integral(self, kernel, grid):
        # Lattice translates tile the torus, so each translate integrates to 1.
        assert float(kernel.values.sum() * grid.h) == pytest.approx(1.0, abs=1e-12)

    def test_2d_kernel(self):
        g = Grid(2, 8.0, 64)
        ker = build_kernel(g, R=2.0)
        assert np.max(np.abs(ker.partition_sum() - 1.0)) < 1e-10

    def test_non_subdividing_grid_rejected(self):
        with pytest.raises(KernelBuildError):
            build_kernel(Grid(1, 12.5, 128))

    def test_small_dilation_rejected(self, grid):
        with pytest.raises(KernelBuildError):
            build_kernel(grid, R=0.5)


class TestVerifyLc:
    def test_zero_field(self, grid, kernel):
        u = WaveField(grid, FrequencyWindow((0.0,), 1.0), 0.0,
                      np.zeros(grid.shape, complex))
        assert verify_lc(u, kernel) == 0.0

    def test_plane_wave_ratio_is_inverse_kernel_integral(self, grid, kernel):
        # Constant modulus: both sides constant, ratio = 1 / integral of kernel.
        k1 = grid.freq_spacing
        values = np.exp(1j * k1 * grid.axis_points())
        values /= np.sqrt(np.sum(np.abs(values) ** 2) * grid.h)
        u = WaveField.from_values(grid, FrequencyWindow((k1,), 0.5), 0.0, values)
        expected = 1.0 / float(kernel.values.sum() * grid.h)
        assert verify_lc(u, kernel) == pytest.approx(expected, rel=1e-10)

    def test_ensemble_constant_finite_and_stable(self, grid, kernel):
        values = [
            verify_lc(make_band_limited(grid, FrequencyWindow((0.0,), 1.0),
                                        "random-phase", seed=s), kernel)
            for s in range(10)
        ]
        assert all(np.isfinite(v) and v > 0 for v in values)
        assert max(values) / min(values) < 10.0


class TestVerifyFs:
    def test_full_torus_equality(self, unit_field, kernel):
        report = verify_fs(unit_field, kernel, tau=0.2, trials=1, seed=0)
        # The all-sites subset enlarges to itself: its margins are exactly 0,
        # every other margin must not be negative at a small tau.
        assert report.n_checks >= 2

    def test_empty_subset_is_vacuous(self, unit_field, kernel):
        from tubeflow.kernels import _subset_mass
        g = site_correlations(kernel, np.abs(unit_field.values) ** 2)
        assert _subset_mass(kernel, g, frozenset()) == 0.0

    def test_margins_nonnegative_at_small_tau(self, unit_field, kernel):
        report = verify_fs(unit_field, kernel, tau=0.05, trials=32, seed=1)
        assert report.passed, report.worst

    def test_margins_fail_at_huge_tau(self, grid, kernel):
        # With a long step the mass escapes any singleton's one-step halo.
        u = make_band_limited(grid, FrequencyWindow((0.0,), 1.0), "gaussian", seed=2)
        report = verify_fs(u, kernel, tau=8.0, trials=48, seed=2)
        assert report.margin_min < 0


class TestCalibrateTau:
    def test_returns_positive_and_reproducible(self, grid, kernel):
        spec = EnsembleSpec(count=3, seed=4)
        a = calibrate_tau(spec, kernel, tau_max=0.5, trials=24, seed=7)
        b = calibrate_tau(spec, kernel, tau_max=0.5, trials=24, seed=7)
        assert a == b
        assert a.tau > 0

    def test_halved_tau_still_passes(self, grid, kernel):
        spec = EnsembleSpec(count=3, seed=4)
        result = calibrate_tau(spec, kernel, tau_max=0.5, trials=24, seed=7)
        for u in spec.fields(grid):
            assert verify_fs(u, kernel, result.tau / 2, trials=24, seed=7).passed

    def test_returned_tau_passes_on_the_ensemble(self, grid, kernel):
        spec = EnsembleSpec(count=3, seed=4)
        result = calibrate_tau(spec, kernel, tau_max=0.5, trials=24, seed=7)
        for u in spec.fields(grid):
            assert verify_fs(u, kernel, result.tau, trials=24, seed=7).passed

    def test_impossible_floor_raises(self, grid, kernel):
        spec = EnsembleSpec(count=1, seed=4)
        with pytest.raises(CalibrationError):
            calibrate_tau(spec, kernel, tau_max=50.0, floor=40.0, trials=16, seed=1)


class TestKernelLemmas:
    def test_empty_and_full_sets_are_degenerate(self, kernel):
        full = frozenset(range(kernel.n_sites))
        report = verify_kernel_lemmas(kernel, [frozenset(), full])
        assert report.gradient_constants[0] == 0.0
        assert report.gradient_constants[1] == 0.0

    def test_half_space_constant_finite(self, kernel):
        half = frozenset(range(kernel.n_sites // 2))
        report = verify_kernel_lemmas(kernel, [half])
        assert 0.0 < report.gradient_constants[0] < np.inf

    def test_convolution_constant_finite(self, kernel, grid):
        x = grid.wrapped_points()[0]
        gaussian = np.exp(-(x**2) / 0.5)
        half = frozenset(range(kernel.n_sites // 2))
        report = verify_kernel_lemmas(kernel, [half, frozenset({0})], [gaussian])
        assert 0.0 < report.convolution_constants[0] < np.inf

    def test_translate_constant_finite(self, kernel):
        report = verify_kernel_lemmas(kernel, [])
        assert 1.0 <= report.translate_constant < np.inf


class TestMassWeights:
    def test_layer_totals_equal_cube_count_times_mass(self, unit_field, kernel):
        mw = mass_weights(unit_field, kernel, tau=0.1, N=2)
        for total in mw.pre_totals:
            assert total == pytest.approx(3.0 * mass(unit_field), abs=1e-9)
        assert mw.weights.layer_total == round(3.0 * mass(unit_field) * mw.weights.den)

    def test_zero_field_all_zero(self, grid, kernel):
        u = WaveField(grid, FrequencyWindow((0.0,), 1.0), 0.0,
                      np.zeros(grid.shape, complex))
        mw = mass_weights(u, kernel, tau=0.1, N=4)
        assert mw.weights.layer_total == 0

    def test_plane_wave_layers_all_equal(self, grid, kernel):
        k1 = 2 * grid.freq_spacing
        values = np.exp(1j * k1 * grid.axis_points())
        values /= np.sqrt(np.sum(np.abs(values) ** 2) * grid.h)
        u = WaveField.from_values(grid, FrequencyWindow((k1,), 0.5), 0.0, values)
        mw = mass_weights(u, kernel, tau=0.3, N=4)
        for n in range(1, 4):
            assert np.allclose(mw.weights.layer(n), mw.weights.layer(0), atol=2)

    def test_odd_layer_count_rejected(self, unit_field, kernel):
        with pytest.raises(ValueError):
            mass_weights(unit_field, kernel, tau=0.1, N=3)

    def test_layer_times_centered(self, unit_field, kernel):
        mw = mass_weights(unit_field, kernel, tau=0.25, N=4)
        assert [mw.layer_time(i) for i in range(4)] == [-0.5, -0.25, 0.0, 0.25]

    def test_correlations_match_direct_quadrature(self, unit_field, kernel, grid):
        g = site_correlations(kernel, np.abs(unit_field.values) ** 2)
        # Direct quadrature at a handful of sites.
        for a in (0, 3, 11):
            shifted = kernel.translate((a,))
            direct = float(np.sum(np.abs(unit_field.values) ** 2 * shifted) * grid.h)
            assert g[a] == pytest.approx(direct, rel=1e-12)
