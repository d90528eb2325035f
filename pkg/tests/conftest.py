import numpy as np
import pytest

from sivsim.rates import Excitation, TransitionRates

# rates whose effective k23 and pump equal the bare constants at TEST_EXC:
# p_ge = 0 makes f_GE = 1 exactly; p_re_star = inf-like makes f_RE - 1 ~ 1e-17
HUGE = 1e16


def make_bare_rates(k12, k21, k23, k31, p_re=10.0):
    """TransitionRates with effective (k12, k23) == given values at bare_exc."""
    return TransitionRates(
        k21=k21,
        k23_0=k23,
        k31=k31,
        sigma_re=k12 / p_re,
        sigma_ge=k12 / p_re,
        p_ns0=HUGE,
        p_re_star=HUGE,
    )


def bare_exc(p_re=10.0):
    return Excitation(p_re=p_re, p_ge=0.0)


@pytest.fixture(scope="session")
def spec_rates():
    """The worked three-level example: k12=0.2, k21=1, k23=0.5, k31=0.1."""
    return make_bare_rates(0.2, 1.0, 0.5, 0.1), bare_exc()


def scale_rates(rates, s):
    """All rate constants scaled by s: identical populations and sweep shapes,
    event and count rates scaled by s (cheap Monte Carlo stand-in)."""
    return TransitionRates(
        k21=rates.k21 * s,
        k23_0=rates.k23_0 * s,
        k31=rates.k31 * s,
        sigma_re=rates.sigma_re * s,
        sigma_ge=rates.sigma_ge * s,
        p_ns0=rates.p_ns0,
        p_re_star=rates.p_re_star,
    )


def random_rate_draws(seed, n):
    """Deterministic batches of (k12, k21, k23, k31) spanning 3 decades."""
    gen = np.random.default_rng(seed)
    k12 = 10.0 ** gen.uniform(-2.5, 0.5, n)
    k21 = 10.0 ** gen.uniform(-1.5, 0.5, n)
    k23 = 10.0 ** gen.uniform(-2.5, 0.5, n)
    k31 = 10.0 ** gen.uniform(-2.5, 0.0, n)
    return np.stack([k12, k21, k23, k31], axis=1)
