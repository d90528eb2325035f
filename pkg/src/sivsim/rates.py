"""Three-level rate model of SiV- emission under red+green excitation.

Level scheme: |1> ground, |2> radiative excited state (emits on |2>->|1>),
|3> dark shelving state fed by electron capture from nitrogen donors.
Green illumination ionizes the donors and thereby suppresses capture;
red illumination enhances it.  All rates are in 1/ns, powers in mW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class ZeroPump(ValueError):
    """Raised when an operation needs nonzero optical pumping."""


def _require_positive(name: str, value: float) -> None:
    if not (value > 0.0 and math.isfinite(value)):
        raise ValueError(f"{name} must be strictly positive and finite, got {value!r}")


@dataclass(frozen=True)
class TransitionRates:
    """Rate constants of the three-level model.

    k21       radiative decay |2>->|1>, 1/ns
    k23_0     capture rate into the shelving state at zero illumination, 1/ns
    k31       de-shelving rate |3>->|1>, 1/ns
    sigma_re  red pump constant, 1/(ns*mW): k12 contribution per mW of red
    sigma_ge  green pump constant, 1/(ns*mW)
    p_ns0     green power at which half of the nitrogen donors are ionized, mW
    p_re_star red power scale of capture enhancement, mW
    """

    k21: float
    k23_0: float
    k31: float
    sigma_re: float
    sigma_ge: float
    p_ns0: float
    p_re_star: float

    def __post_init__(self) -> None:
        for name in ("k21", "k23_0", "k31", "sigma_re", "sigma_ge", "p_ns0", "p_re_star"):
            _require_positive(name, getattr(self, name))


@dataclass(frozen=True)
class Excitation:
    """Red and green optical powers applied to an emitter, in mW."""

    p_re: float = 0.0
    p_ge: float = 0.0

    def __post_init__(self) -> None:
        for name in ("p_re", "p_ge"):
            v = getattr(self, name)
            if not (v >= 0.0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")


@dataclass(frozen=True)
class Populations:
    """Steady-state occupation probabilities of levels |1>, |2>, |3>."""

    n1: float
    n2: float
    n3: float


@dataclass(frozen=True)
class SaturationParams:
    """Hyperbolic saturation-curve parameters I(P) = P*i_inf/(P+p_sat) + k_bg*P.

    Units follow the data they describe: per-emitter photons/ns from
    saturation_params(), detected kcounts/s when fitted to count data.
    """

    i_inf: float
    p_sat: float
    k_bg: float = 0.0

    def __post_init__(self) -> None:
        _require_positive("i_inf", self.i_inf)
        _require_positive("p_sat", self.p_sat)
        if not (self.k_bg >= 0.0 and math.isfinite(self.k_bg)):
            raise ValueError(f"k_bg must be finite and >= 0, got {self.k_bg!r}")


@dataclass(frozen=True)
class ConcentrationScaling:
    """Linear scaling of donor-related constants with nitrogen content.

    k23_0(c) = kappa * c and p_ns0(c) = p0 * c for c in ppm.  Defaults are
    calibrated so the enhancement maximum falls near 4 ppm under the default
    excitation (see defaults module).
    """

    kappa: float
    p0: float

    def __post_init__(self) -> None:
        _require_positive("kappa", self.kappa)
        _require_positive("p0", self.p0)


def effective_capture_rate(rates: TransitionRates, exc: Excitation) -> float:
    """Capture rate k23 = k23_0 * f_GE(P_GE) * f_RE(P_RE).

    f_GE = 1/(1 + P_GE/p_ns0) models suppression of capture by green-light
    donor ionization; f_RE = 1 + P_RE/p_re_star models capture enhancement
    with red power.  Strictly decreasing in P_GE, increasing in P_RE.
    """
    f_ge = 1.0 / (1.0 + exc.p_ge / rates.p_ns0)
    f_re = 1.0 + exc.p_re / rates.p_re_star
    return rates.k23_0 * f_ge * f_re


def pump_rate(rates: TransitionRates, exc: Excitation) -> float:
    """Total pump rate k12 = sigma_re*P_RE + sigma_ge*P_GE, 1/ns."""
    return rates.sigma_re * exc.p_re + rates.sigma_ge * exc.p_ge


def balance_populations(k12: float, k21: float, k23: float, k31: float) -> Populations:
    """Stationary populations for raw rate constants (k12, k23 may be 0).

    n2 = k12*n1/(k21+k23), n3 = k23*n2/k31, normalized to n1+n2+n3 = 1.
    k23 = 0 closes the shelving channel and gives n3 = 0 exactly.
    """
    if k12 == 0.0:
        return Populations(1.0, 0.0, 0.0)
    r2 = k12 / (k21 + k23)                # n2/n1
    r3 = k23 * r2 / k31 if k23 > 0.0 else 0.0
    n1 = 1.0 / (1.0 + r2 + r3)
    return Populations(n1, r2 * n1, r3 * n1)


def steady_state(rates: TransitionRates, exc: Excitation) -> Populations:
    """Stationary populations of the three-level balance equations.

    k23 is the effective capture rate at the given excitation; k12 = 0
    returns the dark state (1, 0, 0).
    """
    return balance_populations(
        pump_rate(rates, exc),
        rates.k21,
        effective_capture_rate(rates, exc),
        rates.k31,
    )


def emission_rate(rates: TransitionRates, exc: Excitation) -> float:
    """Per-emitter photon emission rate k21*n2, photons/ns.

    Algebraically identical to the dual-color law
    k21 / (1 + (k21+k23)/k12 + k23/k31).  Zero pumping is defined as a dark
    emitter and returns 0.0.
    """
    return rates.k21 * steady_state(rates, exc).n2


def saturation_params_at(
    rates: TransitionRates, exc_eval: Excitation, channel: str
) -> SaturationParams:
    """Saturation parameters with k23 frozen at the excitation exc_eval.

    i_inf = k21/(1 + k23/k31);  p_sat = ((k21+k23)/sigma)/(1 + k23/k31)
    where sigma is the pump constant of the swept channel.  With k23 frozen,
    the exact intensity law reduces pointwise to the hyperbola
    P*i_inf/(P+p_sat).
    """
    sigma = _channel_sigma(rates, channel)
    k23 = effective_capture_rate(rates, exc_eval)
    shelve = 1.0 + k23 / rates.k31
    return SaturationParams(
        i_inf=rates.k21 / shelve,
        p_sat=(rates.k21 + k23) / sigma / shelve,
        k_bg=0.0,
    )


def saturation_params(
    rates: TransitionRates, channel: str, eval_power: float | None = None
) -> SaturationParams:
    """Single-channel saturation parameters.

    k23 varies with power, so the hyperbolic parameters depend on where it is
    frozen.  With eval_power=None the freeze point defaults to the channel's
    own saturation power: computed once from k23 at zero power, then iterated
    once (mirrors fitting a hyperbola to the measured curve).
    """
    if eval_power is None:
        p0 = saturation_params_at(rates, Excitation(0.0, 0.0), channel).p_sat
        eval_power = saturation_params_at(rates, _on_channel(channel, p0), channel).p_sat
    elif eval_power < 0.0:
        raise ValueError("eval_power must be >= 0")
    return saturation_params_at(rates, _on_channel(channel, eval_power), channel)


def saturation_curve(params: SaturationParams, p: float) -> float:
    """I(P) = P*i_inf/(P+p_sat) + k_bg*P."""
    if p < 0.0:
        raise ValueError("power must be >= 0")
    return p * params.i_inf / (p + params.p_sat) + params.k_bg * p


def enhancement_factor(rates: TransitionRates, p_re: float, p_ge: float) -> float:
    """Relative gain eta = (I(p_re, p_ge) - I(p_re, 0)) / I(p_re, 0).

    Zero for p_ge = 0; nonnegative under this model (green both suppresses
    capture and adds pumping).
    """
    if p_re <= 0.0:
        raise ZeroPump("enhancement_factor requires p_re > 0")
    i_re = emission_rate(rates, Excitation(p_re, 0.0))
    i_crge = emission_rate(rates, Excitation(p_re, p_ge))
    return (i_crge - i_re) / i_re


def rates_at_concentration(
    base: TransitionRates, c_ppm: float, scaling: ConcentrationScaling
) -> TransitionRates:
    """Rates with donor-dependent constants scaled to concentration c_ppm."""
    if c_ppm <= 0.0:
        raise ValueError("concentration must be > 0 ppm")
    return TransitionRates(
        k21=base.k21,
        k23_0=scaling.kappa * c_ppm,
        k31=base.k31,
        sigma_re=base.sigma_re,
        sigma_ge=base.sigma_ge,
        p_ns0=scaling.p0 * c_ppm,
        p_re_star=base.p_re_star,
    )


def scale_capture(rates: TransitionRates, factor: float) -> TransitionRates:
    """Rates with k23_0 multiplied by factor.

    Config hook for emulating conditions that strengthen or weaken donor
    capture (e.g. cooling); purely phenomenological.
    """
    if not factor > 0.0:
        raise ValueError("capture scale factor must be > 0")
    return TransitionRates(
        k21=rates.k21,
        k23_0=rates.k23_0 * factor,
        k31=rates.k31,
        sigma_re=rates.sigma_re,
        sigma_ge=rates.sigma_ge,
        p_ns0=rates.p_ns0,
        p_re_star=rates.p_re_star,
    )


def eta_vs_concentration(
    c_ppm: float,
    exc: Excitation,
    scaling: ConcentrationScaling,
    base: TransitionRates,
) -> float:
    """Enhancement factor at nitrogen concentration c_ppm.

    Capture strength grows with donor density (k23_0 = kappa*c) while green
    ionization of the denser donor bath needs proportionally more power
    (p_ns0 = p0*c): the competition produces an interior maximum of eta(c).
    """
    return enhancement_factor(
        rates_at_concentration(base, c_ppm, scaling), exc.p_re, exc.p_ge
    )


def _channel_sigma(rates: TransitionRates, channel: str) -> float:
    if channel == "RE":
        return rates.sigma_re
    if channel == "GE":
        return rates.sigma_ge
    raise ValueError(f"channel must be 'RE' or 'GE', got {channel!r}")


def _on_channel(channel: str, power: float) -> Excitation:
    return Excitation(p_re=power, p_ge=0.0) if channel == "RE" else Excitation(p_re=0.0, p_ge=power)
