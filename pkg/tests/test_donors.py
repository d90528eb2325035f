import math

import numpy as np
import pytest

from sivsim.donors import (
    CARBON_DENSITY_NM3,
    gamma_function,
    mean_distance_two_nearest,
    mean_nn_distance,
    nn_cdf,
    ppm_to_density,
    sample_nn_distances,
    sampling_ball_radius,
)

# high-precision references (30-digit arbitrary-precision evaluation)
GAMMA_REFS = {
    1.0 / 3.0: 2.6789385347077476337,
    4.0 / 3.0: 0.89297951156924921122,
    7.0 / 3.0: 1.1906393487589989483,
    10.0 / 3.0: 2.7781584804376642127,
    2.5: 1.3293403881791370205,
    5.0: 24.0,
    10.0: 362880.0,
    10.0 + 1.0 / 3.0: 773118.1876827644907,
}


class TestGamma:
    def test_against_reference_constants(self):
        for z, ref in GAMMA_REFS.items():
            assert abs(gamma_function(z) - ref) / ref < 1e-10

    def test_recurrence(self):
        for z in (0.7, 1.9, 3.3):
            assert gamma_function(z + 1.0) == pytest.approx(z * gamma_function(z), rel=1e-12)

    def test_domain(self):
        with pytest.raises(ValueError):
            gamma_function(0.0)


class TestDensity:
    def test_one_ppm(self):
        assert ppm_to_density(1.0) == pytest.approx(1.762e-4, rel=1e-3)

    def test_four_ppm(self):
        assert ppm_to_density(4.0) == pytest.approx(7.05e-4, rel=1e-3)

    def test_linear_scaling_exact(self):
        assert ppm_to_density(2.0) == 2.0 * ppm_to_density(1.0)

    def test_carbon_density_value(self):
        # 3.515 g/cm^3 diamond, 12.011 g/mol carbon
        assert CARBON_DENSITY_NM3 == pytest.approx(176.2, abs=0.2)

    def test_positive_only(self):
        with pytest.raises(ValueError):
            ppm_to_density(0.0)


class TestAnalyticMeans:
    def test_first_neighbor_at_4ppm(self):
        assert mean_nn_distance(1, ppm_to_density(4.0)) == pytest.approx(6.22, abs=0.02)

    def test_second_neighbor_at_4ppm(self):
        assert mean_nn_distance(2, ppm_to_density(4.0)) == pytest.approx(8.3, abs=0.03)

    def test_density_scaling_exact(self):
        d = ppm_to_density(4.0)
        assert mean_nn_distance(1, 8.0 * d) == pytest.approx(
            mean_nn_distance(1, d) / 2.0, rel=1e-12
        )

    def test_increasing_in_rank_decreasing_in_density(self):
        d = ppm_to_density(4.0)
        means = [mean_nn_distance(k, d) for k in range(1, 8)]
        assert all(a < b for a, b in zip(means, means[1:]))
        assert mean_nn_distance(1, 2 * d) < mean_nn_distance(1, d)

    def test_two_nearest_average(self):
        d = ppm_to_density(4.0)
        two = mean_distance_two_nearest(d)
        assert two == pytest.approx(7.3, abs=0.05)
        assert mean_nn_distance(1, d) < two < mean_nn_distance(2, d)
        assert mean_distance_two_nearest(8.0 * d) == pytest.approx(two / 2.0, rel=1e-12)


class TestSampling:
    def test_mean_matches_analytic(self):
        d = ppm_to_density(4.0)
        for k in (1, 2):
            samples = sample_nn_distances(d, k, 100_000, seed=21)
            mean = float(np.mean(samples))
            se = float(np.std(samples)) / math.sqrt(samples.size)
            assert abs(mean - mean_nn_distance(k, d)) < 3.0 * se

    def test_cdf_kolmogorov_smirnov(self):
        d = ppm_to_density(4.0)
        samples = np.sort(sample_nn_distances(d, 1, 100_000, seed=22))
        ecdf = np.arange(1, samples.size + 1) / samples.size
        cdf = nn_cdf(samples, d)
        ks = float(np.max(np.abs(ecdf - cdf)))
        assert ks < 0.01

    def test_high_density_shrinks(self):
        samples = sample_nn_distances(10.0, 1, 2_000, seed=23)
        assert float(np.mean(samples)) < 0.5

    def test_seed_reproducibility(self):
        d = ppm_to_density(1.0)
        a = sample_nn_distances(d, 1, 5_000, seed=77)
        b = sample_nn_distances(d, 1, 5_000, seed=77)
        c = sample_nn_distances(d, 1, 5_000, seed=78)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_ball_radius_quantile(self):
        d = ppm_to_density(4.0)
        for k in (1, 2, 5):
            radius = sampling_ball_radius(k, d)
            mu = 4.0 * math.pi / 3.0 * d * (radius / 1.1) ** 3
            # P(Poisson(mu) <= k-1) <= 1e-6 at the unpadded radius
            term = math.exp(-mu)
            total = term
            for i in range(1, k):
                term *= mu / i
                total += term
            assert total <= 1.0000001e-6

    def test_validation(self):
        with pytest.raises(ValueError):
            sample_nn_distances(1e-4, 0, 100, seed=1)
        with pytest.raises(ValueError):
            sample_nn_distances(1e-4, 1, 0, seed=1)
        with pytest.raises(ValueError):
            mean_nn_distance(0, 1e-4)
