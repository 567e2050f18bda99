"""Propagator, field factory and symmetry-map tests."""

import numpy as np
import pytest

from tubeflow.schrodinger import (
    FrequencyWindow,
    Grid,
    ResolutionError,
    WaveField,
    galilean_rescale,
    intensity,
    load_field,
    make_band_limited,
    mass,
    propagate,
    save_field,
    spectral_mass,
)

from .oracles import gaussian_free_evolution


@pytest.fixture(scope="module")
def grid():
    return Grid(1, 16.0, 256)


@pytest.fixture(scope="module")
def unit_window():
    return FrequencyWindow((0.0,), 1.0)


class TestGridAndWindow:
    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            Grid(1, 16.0, 100)

    def test_rejects_high_dimension(self):
        with pytest.raises(ValueError):
            Grid(3, 16.0, 64)

    def test_window_beyond_band_rejected(self, grid):
        with pytest.raises(ResolutionError):
            FrequencyWindow((grid.nyquist,), 1.0).check_resolvable(grid)

    def test_wide_window_rejected(self, grid):
        with pytest.raises(ResolutionError):
            FrequencyWindow((0.0,), grid.nyquist * 0.6).check_resolvable(grid)


class TestFactory:
    def test_gaussian_spectrum_peaks_at_center_and_vanishes_outside(self, grid, unit_window):
        u = make_band_limited(grid, unit_window, "gaussian", seed=1)
        spec = np.abs(u.spectrum())
        k = grid.axis_frequencies()
        assert spec.argmax() == 0
        assert np.all(spec[np.abs(k) > 1.0] <= 1e-12 * spec.max())

    def test_random_phase_deterministic(self, grid, unit_window):
        a = make_band_limited(grid, unit_window, "random-phase", seed=42)
        b = make_band_limited(grid, unit_window, "random-phase", seed=42)
        assert np.array_equal(a.values, b.values)
        c = make_band_limited(grid, unit_window, "random-phase", seed=43)
        assert not np.array_equal(a.values, c.values)

    def test_unit_mass(self, grid, unit_window):
        for profile in ("gaussian", "bump", "random-phase"):
            u = make_band_limited(grid, unit_window, profile, seed=3)
            assert mass(u) == pytest.approx(1.0, abs=1e-12)

    def test_band_leak_within_contract(self, grid, unit_window):
        u = make_band_limited(grid, unit_window, "random-phase", seed=5)
        assert u.band_leak() <= 1e-12

    def test_unresolvable_window(self):
        g = Grid(1, 16.0, 16)
        with pytest.raises(ResolutionError):
            make_band_limited(g, FrequencyWindow((3.0,), 0.7), "gaussian")

    def test_2d_factory(self):
        g = Grid(2, 8.0, 32)
        u = make_band_limited(g, FrequencyWindow((0.0, 0.0), 1.0), "random-phase", seed=2)
        assert mass(u) == pytest.approx(1.0, abs=1e-12)
        assert u.band_leak() <= 1e-12


class TestPropagate:
    def test_t0_identity(self, grid, unit_window):
        u = make_band_limited(grid, unit_window, "random-phase", seed=7)
        assert propagate(u, 0.0) is u

    def test_mass_conservation(self, grid, unit_window):
        u = make_band_limited(grid, unit_window, "random-phase", seed=8)
        for t in (0.1, 1.0, 10.0):
            assert mass(propagate(u, t)) == pytest.approx(mass(u), abs=1e-12)

    def test_band_preserved_exactly(self, grid, unit_window):
        u = make_band_limited(grid, unit_window, "random-phase", seed=9)
        assert propagate(u, 2.7).band_leak() <= 1e-12

    def test_group_law(self, grid, unit_window):
        u = make_band_limited(grid, unit_window, "random-phase", seed=10)
        a = propagate(propagate(u, 0.3), 0.9)
        b = propagate(u, 1.2)
        assert np.max(np.abs(a.values - b.values)) < 1e-12
        assert a.time == pytest.approx(b.time)

    def test_gaussian_against_analytic_oracle(self):
        # Wide torus so periodic images stay negligible on the check window.
        g = Grid(1, 128.0, 2048)
        sigma = 8.0
        x = g.axis_points()
        x0 = 64.0
        values = gaussian_free_evolution(x, 0.0, sigma, x0=x0)
        norm = np.sqrt(np.sum(np.abs(values) ** 2) * g.h)
        u = WaveField.from_values(g, FrequencyWindow((0.0,), 1.0), 0.0, values / norm)
        for t in (0.5, 2.0):
            got = propagate(u, t).values
            want = gaussian_free_evolution(x, t, sigma, x0=x0) / norm
            window = np.abs(x - x0) < 32.0
            assert np.max(np.abs(got - want)[window]) < 1e-8


class TestMassAndIntensity:
    def test_zero_field(self, grid, unit_window):
        u = WaveField(grid, unit_window, 0.0, np.zeros(grid.shape, complex))
        assert mass(u) == 0.0
        assert np.all(intensity(u) == 0.0)

    def test_parseval_cross_check(self, grid, unit_window):
        u = make_band_limited(grid, unit_window, "random-phase", seed=11)
        assert mass(u) == pytest.approx(spectral_mass(u), abs=1e-12)

    def test_intensity_nonnegative(self, grid, unit_window):
        u = make_band_limited(grid, unit_window, "gaussian", seed=12)
        assert np.all(intensity(u) >= 0.0)


class TestGalileanRescale:
    def test_identity_parameters_bit_exact(self, grid, unit_window):
        u = make_band_limited(grid, unit_window, "random-phase", seed=13)
        v = galilean_rescale(u, (0.0,), 1.0, "forward")
        assert v.values is u.values

    def test_round_trip(self, grid):
        xi = (8 * grid.freq_spacing,)
        window = FrequencyWindow(xi, 1.0)
        u = make_band_limited(grid, window, "random-phase", seed=14)
        v = galilean_rescale(u, xi, 2.0, "forward")
        w = galilean_rescale(v, xi, 2.0, "inverse")
        assert np.max(np.abs(w.values - u.values)) < 1e-9
        assert w.grid == u.grid
        assert w.window.center == pytest.approx(u.window.center)
        assert w.window.radius == pytest.approx(u.window.radius)

    def test_forward_window_is_unit_ball(self, grid):
        xi = (8 * grid.freq_spacing,)
        window = FrequencyWindow(xi, 2.0)
        u = make_band_limited(grid, window, "random-phase", seed=15)
        v = galilean_rescale(u, xi, 2.0, "forward")
        assert v.window.center == (0.0,)
        assert v.window.radius == pytest.approx(1.0)
        assert v.band_leak() <= 1e-12
        # Spectral support sits inside the unit ball of the new grid.
        spec = np.abs(v.spectrum())
        k = v.grid.axis_frequencies()
        assert np.all(spec[np.abs(k) > 1.0 + 1e-9] < 1e-12 * spec.max())

    def test_mass_scales_by_rho_d(self, grid):
        xi = (0.0,)
        window = FrequencyWindow(xi, 1.0)
        u = make_band_limited(grid, window, "gaussian", seed=16)
        v = galilean_rescale(u, xi, 2.0, "forward")
        assert mass(v) == pytest.approx(2.0 * mass(u), rel=1e-12)

    def test_off_lattice_boost_rejected(self, grid, unit_window):
        u = make_band_limited(grid, unit_window, "gaussian", seed=17)
        with pytest.raises(ResolutionError):
            galilean_rescale(u, (grid.freq_spacing * 0.5,), 1.0, "forward")

    def test_conjugates_propagator(self, grid):
        # forward then evolve rho^2 t equals evolve t then forward.
        xi = (6 * grid.freq_spacing,)
        window = FrequencyWindow(xi, 1.0)
        u = make_band_limited(grid, window, "random-phase", seed=18)
        rho = 2.0
        t = 0.7
        a = propagate(galilean_rescale(u, xi, rho, "forward"), t * rho**2)
        b = galilean_rescale(propagate(u, t), xi, rho, "forward")
        assert np.max(np.abs(a.values - b.values)) < 1e-9
        assert a.time == pytest.approx(b.time)


class TestSnapshotIO:
    def test_save_load_roundtrip(self, tmp_path, grid, unit_window):
        u = make_band_limited(grid, unit_window, "random-phase", seed=19)
        save_field(propagate(u, 0.25), tmp_path / "snap")
        v = load_field(tmp_path / "snap")
        assert np.array_equal(v.values, propagate(u, 0.25).values)
        assert v.time == pytest.approx(0.25)
