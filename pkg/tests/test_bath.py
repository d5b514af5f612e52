import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eaet.bath import (
    DiscretizedBath,
    SpectralDensityParams,
    discretize,
    ohmic_spectral_density,
    reorganization_sum,
)

REGIME1 = SpectralDensityParams(1.2, 2.5)
REGIME2 = SpectralDensityParams(0.3, 5.0)


class TestSpectralDensity:
    def test_zero_frequency(self):
        assert ohmic_spectral_density(REGIME1, 0.0) == 0.0

    def test_at_cutoff(self):
        expected = 0.5 * np.pi * 1.2 * 2.5 * np.exp(-1.0)
        assert ohmic_spectral_density(REGIME1, 2.5) == pytest.approx(expected, rel=1e-14)
        assert ohmic_spectral_density(REGIME1, 2.5) == pytest.approx(1.733591, abs=1e-6)

    def test_zero_coupling(self):
        assert ohmic_spectral_density(SpectralDensityParams(0.0, 5.0), 3.0) == 0.0

    def test_vectorized(self):
        w = np.linspace(0, 10, 7)
        out = ohmic_spectral_density(REGIME2, w)
        np.testing.assert_allclose(out, 0.5 * np.pi * 0.3 * w * np.exp(-w / 5.0))

    def test_negative_frequency_rejected(self):
        with pytest.raises(ValueError):
            ohmic_spectral_density(REGIME1, -0.1)

    @pytest.mark.parametrize("xi, wc", [(-1.0, 1.0), (1.0, 0.0), (1.0, -2.0), (np.nan, 1.0)])
    def test_invalid_params(self, xi, wc):
        with pytest.raises(ValueError):
            SpectralDensityParams(xi, wc)


class TestDiscretize:
    def test_single_mode(self):
        bath = discretize(REGIME1, 1)
        np.testing.assert_allclose(bath.omega, [2.5 * np.log(2.0)], rtol=1e-14)
        np.testing.assert_allclose(bath.c, [2.5 * np.log(2.0) * np.sqrt(3.0)], rtol=1e-14)
        assert bath.omega[0] == pytest.approx(1.73287, abs=1e-5)
        assert bath.c[0] == pytest.approx(3.00141, abs=1e-5)

    def test_sixty_modes(self):
        bath = discretize(REGIME1, 60)
        assert bath.n_modes == 60
        assert reorganization_sum(bath) == pytest.approx(1.5, rel=1e-12)
        assert reorganization_sum(discretize(REGIME2, 60)) == pytest.approx(0.75, rel=1e-12)

    def test_masses_unit(self):
        np.testing.assert_array_equal(discretize(REGIME2, 10).mass, np.ones(10))

    def test_zero_modes_rejected(self):
        with pytest.raises(ValueError):
            discretize(REGIME1, 0)

    def test_arrays_read_only(self):
        bath = discretize(REGIME1, 5)
        with pytest.raises(ValueError):
            bath.omega[0] = 1.0

    @settings(max_examples=60, deadline=None)
    @given(xi=st.floats(1e-3, 10.0), wc=st.floats(1e-2, 50.0), n=st.integers(1, 400))
    def test_sum_rule(self, xi, wc, n):
        params = SpectralDensityParams(xi, wc)
        assert reorganization_sum(discretize(params, n)) == pytest.approx(params.reorganization_target, rel=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 300))
    def test_monotone(self, n):
        assert np.all(np.diff(discretize(REGIME2, n).omega) > 0)

    @settings(max_examples=30, deadline=None)
    @given(k=st.floats(0.01, 100.0), n=st.integers(1, 100))
    def test_coupling_scaling(self, k, n):
        a = discretize(REGIME1, n)
        b = discretize(SpectralDensityParams(1.2 * k, 2.5), n)
        np.testing.assert_array_equal(a.omega, b.omega)
        np.testing.assert_allclose(b.c, np.sqrt(k) * a.c, rtol=1e-12)

    def test_large_n_reproduces_density(self):
        # histogram of c^2/w weighted by pi/2 approximates J(w)
        bath = discretize(REGIME1, 20000)
        edges = np.linspace(0.5, 8.0, 16)
        weights = 0.5 * np.pi * bath.c**2 / (bath.mass * bath.omega)
        hist, _ = np.histogram(bath.omega, bins=edges, weights=weights)
        centers = 0.5 * (edges[1:] + edges[:-1])
        np.testing.assert_allclose(hist / np.diff(edges), ohmic_spectral_density(REGIME1, centers), rtol=0.02)


class TestReorganizationSum:
    def test_uncoupled(self):
        assert reorganization_sum(DiscretizedBath.single_mode(1.0, 0.0)) == 0.0

    def test_single_mode(self):
        assert reorganization_sum(DiscretizedBath.single_mode(2.0, 2.0)) == pytest.approx(0.5)


class TestBathValidation:
    def test_nonpositive_frequency(self):
        with pytest.raises(ValueError):
            DiscretizedBath(np.array([0.0, 1.0]), np.ones(2), np.ones(2))

    def test_unsorted(self):
        with pytest.raises(ValueError):
            DiscretizedBath(np.array([2.0, 1.0]), np.ones(2), np.ones(2))

    def test_bad_mass(self):
        with pytest.raises(ValueError):
            DiscretizedBath(np.array([1.0]), np.ones(1), np.zeros(1))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            DiscretizedBath(np.array([1.0, 2.0]), np.ones(3), np.ones(2))
