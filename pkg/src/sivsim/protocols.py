"""Synthetic versions of the measurement protocols: sweeps, traces, calibration.

Every routine is deterministic given (config, seed) and returns plain arrays
or dicts ready for the CSV/JSON writers in the io module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .correlation import g2_from_rates
from .fit import DataSeries, FitResult, fit_decay, fit_shifted_saturation, levenberg_marquardt
from .mc import (
    DetectionConfig,
    EmitterEnsemble,
    ExcitationSchedule,
    PulseConfig,
    detected_rate_kcps,
    simulate_decay_histogram,
    simulate_stream,
    simulate_time_trace,
)
from .rates import (
    ConcentrationScaling,
    Excitation,
    TransitionRates,
    enhancement_factor,
    rates_at_concentration,
    saturation_params,
    saturation_params_at,
)

EV_NM = 1239.842  # photon energy conversion, eV*nm
CRGE_PROBE_P_GE = 0.4  # mW of green used for the combined-excitation gain


@dataclass(frozen=True)
class SweepSpec:
    """Power sweep: channel RE/GE/CRGE, fixed complement power, power grid.

    channel RE and CRGE sweep the red power (fixed = green power, zero for
    plain RE); channel GE sweeps green (fixed = red power).
    """

    channel: str
    fixed: float
    grid: tuple[float, ...]
    mode: str = "analytic"

    def __post_init__(self) -> None:
        if self.channel not in ("RE", "GE", "CRGE"):
            raise ValueError("channel must be RE, GE, or CRGE")
        if self.mode not in ("analytic", "monte_carlo"):
            raise ValueError("mode must be analytic or monte_carlo")
        if len(self.grid) == 0:
            raise ValueError("grid must be nonempty")
        g = np.asarray(self.grid, dtype=float)
        if np.any(g < 0) or np.any(np.diff(g) <= 0) and g.size > 1:
            raise ValueError("grid must be nonnegative and strictly increasing")
        if self.fixed < 0:
            raise ValueError("fixed power must be >= 0")

    def excitation(self, power: float) -> Excitation:
        if self.channel == "GE":
            return Excitation(p_re=self.fixed, p_ge=power)
        return Excitation(p_re=power, p_ge=self.fixed)


@dataclass(frozen=True)
class CalibrationTargets:
    """Headline observables the rate model is calibrated against.

    ge_halfway_power is the green power at which the bunching amplitude has
    completed half of its total drop; the measured amplitude plateaus (>90%
    of the drop) by roughly ten times this value.
    """

    psat_re: float = 8.9
    psat_ge: float = 20.5
    crge_gain: float = 6.0
    ge_halfway_power: float = 0.02
    weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        for name in ("psat_re", "psat_ge", "crge_gain", "ge_halfway_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if len(self.weights) != 4 or any(w <= 0 for w in self.weights):
            raise ValueError("weights must be 4 positive numbers")

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        t = np.array([self.psat_re, self.psat_ge, self.crge_gain, self.ge_halfway_power])
        return t, np.asarray(self.weights, dtype=float)


@dataclass(frozen=True)
class LifetimeSweepSpec:
    """Excitation-wavelength sweep of the fluorescence lifetime.

    The nonradiative rate follows a logistic step in photon energy,
    k_nr(E) = knr_max / (1 + exp(-(E - e_th)/width)), so the observed
    lifetime 1/(k_r + k_nr) drops above the donor-ionization threshold.
    """

    wavelengths_nm: tuple[float, ...] = tuple(float(w) for w in range(550, 650, 10))
    e_th_ev: float = 2.07
    width_ev: float = 0.02
    knr_max: float = 0.099 / 1.7
    k_r: float = 1.0 / 1.7

    def __post_init__(self) -> None:
        if not self.wavelengths_nm:
            raise ValueError("wavelengths_nm must be nonempty")
        for w in self.wavelengths_nm:
            if not 400.0 <= w <= 800.0:
                raise ValueError("wavelengths outside the supported 400-800 nm band")
        for name in ("e_th_ev", "width_ev", "knr_max", "k_r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    def knr(self, energy_ev: float) -> float:
        return self.knr_max / (1.0 + math.exp(-(energy_ev - self.e_th_ev) / self.width_ev))

    def tau_ns(self, wavelength_nm: float) -> float:
        return 1.0 / (self.k_r + self.knr(EV_NM / wavelength_nm))


def crge_saturation_params(rates: TransitionRates, p_ge: float = CRGE_PROBE_P_GE):
    """Red-sweep saturation parameters with p_ge mW of green co-illumination.

    The capture rate is frozen at the sweep's own saturation power, iterated
    once, like the single-channel version.
    """
    p0 = saturation_params_at(rates, Excitation(0.0, p_ge), "RE").p_sat
    p1 = saturation_params_at(rates, Excitation(p0, p_ge), "RE").p_sat
    return saturation_params_at(rates, Excitation(p1, p_ge), "RE")


def crge_gain(rates: TransitionRates, p_ge: float = CRGE_PROBE_P_GE) -> float:
    """Ratio of saturated intensities, red+green sweep over red-only sweep."""
    return crge_saturation_params(rates, p_ge).i_inf / saturation_params(rates, "RE").i_inf


def bunching_amplitude_halfway(rates: TransitionRates, p_re: float) -> float:
    """Green power at which the bunching amplitude a(P_GE) is halfway down.

    a falls from a(0) toward 0 as green suppresses capture; the halfway
    crossing is located by bisection on an expanding bracket.
    """
    a0 = g2_from_rates(rates, Excitation(p_re, 0.0)).a
    target = 0.5 * a0
    lo, hi = 0.0, 1e-6
    while g2_from_rates(rates, Excitation(p_re, hi)).a > target:
        hi *= 4.0
        if hi > 1e9:
            raise RuntimeError("bunching amplitude never reaches half its zero-power value")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g2_from_rates(rates, Excitation(p_re, mid)).a > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def eta_curve(rates: TransitionRates, p_re: float, p_ge_grid: np.ndarray) -> np.ndarray:
    return np.array([enhancement_factor(rates, p_re, p) for p in p_ge_grid])


def plateau_onset(powers: np.ndarray, values: np.ndarray, fraction: float = 0.8) -> float:
    """Smallest grid power at which values reach fraction * max(values)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    thresh = fraction * float(np.max(values))
    idx = np.nonzero(values >= thresh)[0]
    return float(powers[idx[0]])


def run_saturation_sweep(
    rates: TransitionRates,
    spec: SweepSpec,
    n_emitters: int = 1,
    detection: DetectionConfig | None = None,
    seed: int = 0,
    duration_s_per_point: float = 10.0,
) -> DataSeries:
    """Detected count rate (kcounts/s) versus power along a sweep.

    Analytic mode evaluates the rate model; monte_carlo simulates each grid
    point for duration_s_per_point with a per-point derived seed.  Both
    include the detector background, so the two modes are directly
    comparable and feed fit_saturation unchanged.
    """
    det = detection if detection is not None else DetectionConfig()
    grid = np.asarray(spec.grid, dtype=float)
    if spec.mode == "analytic":
        y = np.array(
            [detected_rate_kcps(rates, spec.excitation(p), n_emitters, det) for p in grid]
        )
        return DataSeries(grid, y)
    y = np.empty(grid.size)
    sig = np.empty(grid.size)
    for i, p in enumerate(grid):
        sub = int(rng.derive_seed(seed, rng.STREAM_NOISE, i))
        ens = EmitterEnsemble(n_emitters, rates, spec.excitation(p))
        stream = simulate_stream(ens, det, duration_s_per_point, sub)
        counts = len(stream)
        y[i] = counts / duration_s_per_point / 1e3
        sig[i] = max(math.sqrt(counts), 1.0) / duration_s_per_point / 1e3
    return DataSeries(grid, y, sig)


def run_crge_trace(
    rates: TransitionRates,
    p_re: float,
    p_ge: float,
    segment_s: float,
    n_cycles: int,
    detection: DetectionConfig,
    seed: int,
    n_emitters: int = 1,
    bins_per_segment: int = 20,
) -> dict:
    """Alternating red-only / red+green time trace with segment statistics.

    Each cycle is one red-only segment followed by one combined segment; the
    first 10% of every segment is discarded as switching transient.  Segment
    means are background-subtracted before forming eta = dI/I_RE.
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    segs = []
    for _ in range(n_cycles):
        segs.append((segment_s, Excitation(p_re, 0.0)))
        segs.append((segment_s, Excitation(p_re, p_ge)))
    schedule = ExcitationSchedule(tuple(segs))
    bin_s = segment_s / bins_per_segment
    t, counts = simulate_time_trace(
        EmitterEnsemble(n_emitters, rates, Excitation(p_re, 0.0)),
        detection, schedule, bin_s, seed,
    )
    kcps = counts / bin_s / 1e3
    discard = max(1, int(math.ceil(0.1 * bins_per_segment)))
    re_means = []
    crge_means = []
    for c in range(2 * n_cycles):
        seg = kcps[c * bins_per_segment + discard:(c + 1) * bins_per_segment]
        (re_means if c % 2 == 0 else crge_means).append(float(np.mean(seg)))
    bg_kcps = 2.0 * detection.background_rate / 1e3
    i_re = float(np.mean(re_means)) - bg_kcps
    i_crge = float(np.mean(crge_means)) - bg_kcps
    delta = i_crge - i_re
    return {
        "trace_t_s": t,
        "trace_kcps": kcps,
        "i_re_kcps": i_re,
        "i_crge_kcps": i_crge,
        "delta_i_kcps": delta,
        "eta": delta / i_re,
    }


def run_ge_power_sweep(
    rates: TransitionRates,
    p_re_levels: tuple[float, ...],
    p_ge_grid: np.ndarray,
    n_emitters: int = 1,
    detection: DetectionConfig | None = None,
) -> list[dict]:
    """Green-power response dI(P_GE) at fixed red levels, with shifted fits.

    Returns one row per red level: the dI series, the red-only baseline, and
    the fitted (dI_inf, p_sat).
    """
    if not p_re_levels:
        raise ValueError("p_re_levels must be nonempty")
    det = detection if detection is not None else DetectionConfig(background_rate=0.0)
    grid = np.asarray(p_ge_grid, dtype=float)
    out = []
    for p_re in p_re_levels:
        i_re = detected_rate_kcps(rates, Excitation(p_re, 0.0), n_emitters, det)
        y = np.array(
            [detected_rate_kcps(rates, Excitation(p_re, p), n_emitters, det) for p in grid]
        )
        pars, res = fit_shifted_saturation(DataSeries(grid, y), i_re)
        out.append(
            {
                "p_re_mw": p_re,
                "p_ge_mw": grid,
                "delta_i_kcps": y - i_re,
                "i_re_kcps": i_re,
                "d_inf_kcps": pars["d_inf"],
                "p_sat_mw": pars["p_sat"],
                "fit": res,
            }
        )
    return out


def run_concentration_sweep(
    c_grid: np.ndarray,
    exc: Excitation,
    scaling: ConcentrationScaling,
    base: TransitionRates,
    saturation_grid: np.ndarray | None = None,
) -> dict:
    """Enhancement factor versus nitrogen concentration, plus per-c curves.

    The per-concentration red-only saturation curves (per-emitter photons/ns)
    mirror the figure in which brighter low-nitrogen samples saturate harder.
    """
    c_grid = np.asarray(c_grid, dtype=float)
    if np.any(c_grid <= 0):
        raise ValueError("concentrations must be > 0 ppm")
    etas = np.array(
        [
            enhancement_factor(rates_at_concentration(base, c, scaling), exc.p_re, exc.p_ge)
            for c in c_grid
        ]
    )
    curves = {}
    if saturation_grid is not None:
        from .rates import emission_rate

        pg = np.asarray(saturation_grid, dtype=float)
        for c in c_grid:
            rc = rates_at_concentration(base, c, scaling)
            curves[float(c)] = np.array(
                [emission_rate(rc, Excitation(p, 0.0)) for p in pg]
            )
    return {"c_ppm": c_grid, "eta": etas, "saturation_curves": curves}


def run_lifetime_sweep(
    spec: LifetimeSweepSpec,
    n_photons: int,
    seed: int,
    pulse: PulseConfig | None = None,
    background_fraction: float = 0.02,
) -> list[dict]:
    """Simulate and fit a decay histogram per excitation wavelength.

    Returns rows (wavelength_nm, energy_ev, tau_true_ns, tau_fit_ns).  The
    fit window starts 3 IRF sigmas past the histogram peak.
    """
    pulse = pulse if pulse is not None else PulseConfig()
    rows = []
    for i, wl in enumerate(spec.wavelengths_nm):
        energy = EV_NM / wl
        tau_true = spec.tau_ns(wl)
        sub = int(rng.derive_seed(seed, rng.STREAM_DECAY, 1000 + i))
        t, counts = simulate_decay_histogram(tau_true, pulse, n_photons, background_fraction, sub)
        peak_t = float(t[int(np.argmax(counts))])
        t_start = peak_t + 3.0 * pulse.irf_sigma_ps * 1e-3
        fitted, res = fit_decay(t, counts, (t_start, float(t[-1])))
        rows.append(
            {
                "wavelength_nm": wl,
                "energy_ev": energy,
                "tau_true_ns": tau_true,
                "tau_fit_ns": fitted["tau"],
                "converged": res.converged,
            }
        )
    return rows


_FREE_DEFAULT = ("k23_0", "sigma_re", "sigma_ge", "p_ns0")
_HALFWAY_P_RE = 10.0  # red power at which the bunching halfway point is probed


def calibration_observables(rates: TransitionRates) -> np.ndarray:
    """Forward model for calibrate(): the four target observables."""
    return np.array(
        [
            saturation_params(rates, "RE").p_sat,
            saturation_params(rates, "GE").p_sat,
            crge_gain(rates),
            bunching_amplitude_halfway(rates, _HALFWAY_P_RE),
        ]
    )


def calibrate(
    targets: CalibrationTargets,
    free: tuple[str, ...] = _FREE_DEFAULT,
    base: TransitionRates | None = None,
) -> tuple[TransitionRates, FitResult]:
    """Weighted least-squares inversion of the headline observables.

    Optimizes the free rate parameters (log-scale) so the forward model
    matches the targets; the remaining parameters are taken from base.
    Residuals are relative to the target values, scaled by the weights.
    Flags "non_identifiable" when the covariance is rank-deficient.
    """
    from .defaults import DEFAULT_RATES

    base = base if base is not None else DEFAULT_RATES
    if len(free) < 1:
        raise ValueError("need at least one free parameter")
    unknown = set(free) - {"k21", "k23_0", "k31", "sigma_re", "sigma_ge", "p_ns0", "p_re_star"}
    if unknown:
        raise ValueError(f"unknown free parameters: {sorted(unknown)}")
    tvals, weights = targets.as_arrays()
    if tvals.size < len(free):
        raise ValueError("need at least as many targets as free parameters")

    def build(params: np.ndarray) -> TransitionRates:
        kw = {name: getattr(base, name) for name in
              ("k21", "k23_0", "k31", "sigma_re", "sigma_ge", "p_ns0", "p_re_star")}
        for name, value in zip(free, params):
            kw[name] = float(value)
        return TransitionRates(**kw)

    def model(params: np.ndarray, _x: np.ndarray) -> np.ndarray:
        return calibration_observables(build(params)) / tvals

    data = DataSeries(np.arange(tvals.size, dtype=float), np.ones(tvals.size), 1.0 / weights)
    init = np.array([getattr(base, name) for name in free], dtype=float)
    res = levenberg_marquardt(model, data, init, positive=np.ones(len(free), dtype=bool))
    if np.linalg.matrix_rank(res.covariance) < len(free):
        res.flags.append("non_identifiable")
    return build(res.params), res
