import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sivsim.correlation import G2ModelParams, g2_model
from sivsim.defaults import DEFAULT_RATES
from sivsim.fit import (
    DataSeries,
    NonFiniteModel,
    WindowTooShort,
    fit_decay,
    fit_g2_series,
    fit_saturation,
    fit_shifted_saturation,
    levenberg_marquardt,
    numeric_jacobian,
    saturation_model,
)
from sivsim.mc import PulseConfig, simulate_decay_histogram
from sivsim.rates import Excitation, SaturationParams, emission_rate, saturation_curve


def quadratic(p, x):
    return p[0] * x**2 + p[1] * x + p[2]


class TestEngine:
    def test_exact_quadratic_recovery(self):
        x = np.linspace(-2.0, 3.0, 25)
        truth = np.array([1.5, -2.0, 0.7])
        res = levenberg_marquardt(quadratic, DataSeries(x, quadratic(truth, x)),
                                  np.array([0.3, 0.5, -1.0]))
        assert res.converged and res.n_iter <= 20
        assert np.allclose(res.params, truth, rtol=1e-8)

    def test_noisy_saturation_within_5pct(self):
        gen = np.random.default_rng(42)
        x = np.linspace(0.1, 40.0, 50)
        sp = SaturationParams(421.0, 8.9, 2.0)
        y = np.array([saturation_curve(sp, p) for p in x])
        data = DataSeries(x, y * (1.0 + 0.01 * gen.standard_normal(x.size)))
        params, res = fit_saturation(data)
        assert res.converged
        assert abs(params.i_inf / 421.0 - 1.0) < 0.05
        assert abs(params.p_sat / 8.9 - 1.0) < 0.05
        assert abs(params.k_bg / 2.0 - 1.0) < 0.05

    def test_jacobian_against_independent_differences(self):
        theta = np.array([1.3, -0.4, 2.2])
        x = np.linspace(0.0, 5.0, 17)

        def fun(t):
            return np.sin(t[0] * x) * np.exp(-t[1] * x) + t[2] * x

        jac = numeric_jacobian(fun, theta)
        h = 1e-7
        for j in range(3):
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            col = (fun(tp) - fun(tm)) / (2 * h)
            denom = np.maximum(np.abs(col), 1e-8)
            assert np.max(np.abs(jac[:, j] - col) / denom) < 1e-6

    def test_cost_history_nonincreasing(self):
        gen = np.random.default_rng(3)
        x = np.linspace(0.0, 20.0, 60)
        y = quadratic(np.array([0.5, 1.0, -3.0]), x) + gen.normal(0, 5.0, x.size)
        res = levenberg_marquardt(quadratic, DataSeries(x, y), np.array([5.0, -4.0, 10.0]))
        assert np.all(np.diff(res.cost_history) <= 1e-12)

    def test_covariance_diagonal_nonnegative(self):
        gen = np.random.default_rng(4)
        x = np.linspace(0.1, 30.0, 40)
        sp = SaturationParams(100.0, 5.0, 0.5)
        y = np.array([saturation_curve(sp, p) for p in x]) + gen.normal(0, 1.0, x.size)
        _, res = fit_saturation(DataSeries(x, y))
        assert np.all(np.diag(res.covariance) >= 0)
        assert np.all(res.stderr >= 0)

    def test_reorder_invariance(self):
        gen = np.random.default_rng(5)
        x = np.linspace(0.1, 40.0, 50)
        sp = SaturationParams(421.0, 8.9, 2.0)
        y = np.array([saturation_curve(sp, p) for p in x]) * (
            1.0 + 0.01 * gen.standard_normal(x.size)
        )
        perm = gen.permutation(x.size)
        p1, _ = fit_saturation(DataSeries(x, y))
        p2, _ = fit_saturation(DataSeries(x[perm], y[perm]))
        assert p1.i_inf == pytest.approx(p2.i_inf, rel=1e-6)
        assert p1.p_sat == pytest.approx(p2.p_sat, rel=1e-6)

    def test_positivity_constraint_never_violated(self):
        # data pulling the amplitude toward zero: log-parameterization must
        # keep it strictly positive
        x = np.linspace(0.1, 10.0, 30)
        y = -0.1 * np.ones(30)

        def decaying(p, x):
            return p[0] * np.exp(-x / p[1])

        res = levenberg_marquardt(decaying, DataSeries(x, y), np.array([1.0, 2.0]),
                                  positive=np.array([True, True]))
        assert np.all(res.params > 0)

    def test_nonfinite_model_raises(self):
        x = np.linspace(0.0, 1.0, 10)

        def bad(p, x):
            return np.full_like(x, np.nan)

        with pytest.raises(NonFiniteModel):
            levenberg_marquardt(bad, DataSeries(x, np.zeros(10)), np.array([1.0]))

    def test_more_parameters_than_points_rejected(self):
        x = np.array([1.0, 2.0])
        with pytest.raises(ValueError):
            levenberg_marquardt(quadratic, DataSeries(x, x), np.zeros(3))

    @settings(max_examples=25, deadline=None)
    @given(
        i_inf=st.floats(10.0, 1e3), p_sat=st.floats(0.5, 30.0), k=st.floats(0.0, 5.0)
    )
    def test_noiseless_saturation_roundtrip(self, i_inf, p_sat, k):
        x = np.linspace(0.2, 50.0, 40)
        sp = SaturationParams(i_inf, p_sat, k)
        y = np.array([saturation_curve(sp, p) for p in x])
        params, res = fit_saturation(DataSeries(x, y))
        assert res.converged
        assert params.i_inf == pytest.approx(i_inf, rel=1e-6)
        assert params.p_sat == pytest.approx(p_sat, rel=1e-6)


class TestFitSaturation:
    def test_noiseless_exact(self):
        x = np.linspace(0.1, 40.0, 50)
        sp = SaturationParams(421.0, 8.9, 0.0)
        y = np.array([saturation_curve(sp, p) for p in x])
        params, _ = fit_saturation(DataSeries(x, y))
        assert params.i_inf == pytest.approx(421.0, rel=1e-8)
        assert params.p_sat == pytest.approx(8.9, rel=1e-8)
        assert params.k_bg == pytest.approx(0.0, abs=1e-8)

    def test_ge_channel_parameters(self):
        gen = np.random.default_rng(7)
        x = np.linspace(0.5, 100.0, 60)
        sp = SaturationParams(884.0, 20.5, 1.0)
        y = np.array([saturation_curve(sp, p) for p in x])
        params, _ = fit_saturation(
            DataSeries(x, y * (1.0 + 0.01 * gen.standard_normal(x.size)))
        )
        assert abs(params.p_sat / 20.5 - 1.0) < 0.05
        assert abs(params.i_inf / 884.0 - 1.0) < 0.05

    def test_poor_conditioning_flagged(self):
        # data stop far below saturation: P_sat unidentifiable but not fatal
        x = np.linspace(0.01, 0.5, 20)
        sp = SaturationParams(421.0, 8.9, 0.0)
        y = np.array([saturation_curve(sp, p) for p in x])
        params, res = fit_saturation(DataSeries(x, y))
        assert "psat_poorly_conditioned" in res.flags

    def test_needs_four_points(self):
        with pytest.raises(ValueError):
            fit_saturation(DataSeries(np.arange(3.0), np.arange(3.0)))


class TestFitShiftedSaturation:
    def test_rate_model_delta_series(self):
        p_ge = np.geomspace(0.02, 2.0, 20)
        i_re = emission_rate(DEFAULT_RATES, Excitation(5.1, 0.0))
        y = np.array([emission_rate(DEFAULT_RATES, Excitation(5.1, p)) for p in p_ge])
        pars, res = fit_shifted_saturation(DataSeries(p_ge, y), i_re)
        assert res.converged
        fit_curve = pars["d_inf"] * p_ge / (p_ge + pars["p_sat"])
        delta = y - i_re
        # the rate-model response is only approximately hyperbolic
        assert np.max(np.abs(fit_curve - delta)) < 0.10 * np.max(delta)

    def test_zero_response_flagged(self):
        p_ge = np.geomspace(0.02, 2.0, 10)
        y = np.full(10, 5.0)
        pars, res = fit_shifted_saturation(DataSeries(p_ge, y), 5.0)
        assert "delta_unidentifiable" in res.flags

    def test_fig1e_trends_across_re_levels(self):
        p_ge = np.geomspace(0.02, 2.0, 20)
        d_infs, p_sats = [], []
        for p_re in (0.2, 5.1, 10.0):
            i_re = emission_rate(DEFAULT_RATES, Excitation(p_re, 0.0))
            y = np.array([emission_rate(DEFAULT_RATES, Excitation(p_re, p)) for p in p_ge])
            pars, _ = fit_shifted_saturation(DataSeries(p_ge, y), i_re)
            d_infs.append(pars["d_inf"])
            p_sats.append(pars["p_sat"])
        assert d_infs[0] < d_infs[1] < d_infs[2]
        assert p_sats[0] > p_sats[1] > p_sats[2]


class TestFitG2:
    def test_noiseless_model_recovery(self):
        truth = G2ModelParams(a=0.8, tau1=1.2, tau2=18.0)
        tau = np.linspace(0.0, 80.0, 161)
        fitted, res = fit_g2_series(tau, g2_model(truth, tau), form="full")
        assert res.converged
        assert fitted.a == pytest.approx(0.8, rel=1e-6)
        assert fitted.tau1 == pytest.approx(1.2, rel=1e-6)
        assert fitted.tau2 == pytest.approx(18.0, rel=1e-6)

    def test_bunching_only_form(self):
        truth = G2ModelParams(a=0.6, tau1=0.5, tau2=25.0)
        tau = np.linspace(2.0, 100.0, 70)
        y = 1.0 + truth.a * np.exp(-tau / truth.tau2)
        fitted, res = fit_g2_series(tau, y, form="bunching_only", min_tau=1.0)
        assert res.converged
        assert fitted.a == pytest.approx(0.6, rel=1e-6)
        assert fitted.tau2 == pytest.approx(25.0, rel=1e-6)

    def test_amplitude_series_decreases_and_plateaus(self):
        # fitted a versus green power with the calibrated suppression
        # constants: monotone decrease, >90% of the drop done by 0.5 mW
        from sivsim.correlation import g2_from_rates
        from sivsim.defaults import G2_SWEEP_RATES

        gen = np.random.default_rng(11)
        tau = np.geomspace(1e3, 4e6, 150)
        fitted_a = []
        for p_ge in (1e-4, 0.02, 0.05, 0.1, 0.2, 0.5):
            model = g2_from_rates(G2_SWEEP_RATES, Excitation(10.0, p_ge))
            y = 1.0 + model.a * np.exp(-tau / model.tau2)
            y = y + gen.normal(0.0, 0.003, tau.size)
            fit, res = fit_g2_series(tau, y, np.full(tau.size, 0.003),
                                     form="bunching_only")
            assert res.converged
            fitted_a.append(fit.a)
        assert all(a1 > a2 for a1, a2 in zip(fitted_a, fitted_a[1:]))
        assert fitted_a[-1] < 0.1 * fitted_a[0]

    def test_invalid_form(self):
        with pytest.raises(ValueError):
            fit_g2_series(np.arange(5.0), np.ones(5), form="nope")


class TestFitDecay:
    def test_recovers_lifetime_within_2pct(self):
        t, counts = simulate_decay_histogram(1.7, PulseConfig(), 1_000_000, 0.02, seed=55)
        peak = float(t[np.argmax(counts)])
        fitted, res = fit_decay(t, counts, (peak + 0.105, float(t[-1])))
        assert res.converged
        assert abs(fitted["tau"] / 1.7 - 1.0) < 0.02

    def test_pure_exponential_statistical(self):
        pulse = PulseConfig(rep_rate_mhz=8.0, irf_sigma_ps=0.0, window_ns=125.0)
        n = 300_000
        t, counts = simulate_decay_histogram(4.0, pulse, n, 0.0, seed=56,
                                             bin_width_ps=100.0)
        fitted, _ = fit_decay(t, counts, (0.0, 40.0))
        assert abs(fitted["tau"] / 4.0 - 1.0) < 3.0 / np.sqrt(n) * 3

    def test_nine_pct_lifetime_ratio_resolved(self):
        taus = (1.7, 1.7 * 0.91)
        fits = []
        for i, tau in enumerate(taus):
            t, counts = simulate_decay_histogram(tau, PulseConfig(), 1_000_000,
                                                 0.02, seed=60 + i)
            peak = float(t[np.argmax(counts)])
            fitted, _ = fit_decay(t, counts, (peak + 0.105, float(t[-1])))
            fits.append(fitted["tau"])
        assert 0.88 <= fits[1] / fits[0] <= 0.94

    def test_window_too_short(self):
        t = np.linspace(0.0, 10.0, 100)
        with pytest.raises(WindowTooShort):
            fit_decay(t, np.ones(100), (9.5, 9.9))


def test_data_series_validation():
    with pytest.raises(ValueError):
        DataSeries(np.arange(3.0), np.arange(4.0))
    with pytest.raises(ValueError):
        DataSeries(np.arange(3.0), np.arange(3.0), np.zeros(3))


def test_saturation_model_shape():
    p = np.array([100.0, 5.0, 1.0])
    x = np.array([0.0, 5.0])
    y = saturation_model(p, x)
    assert y[0] == 0.0 and y[1] == pytest.approx(55.0)
