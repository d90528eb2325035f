"""Second-order correlation: g2 estimation from streams and the rate model.

The estimator histograms pairwise delays t_B - t_A between the two detector
channels with a linear-time two-pointer sweep and normalizes by the
product-of-rates estimate rate_A * rate_B * bin_width * T, which is unbiased
even when bunching tails extend beyond the histogram window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .mc import DetectionConfig, EmitterEnsemble, PhotonStream, iter_stream_chunks
from .rates import (
    Excitation,
    TransitionRates,
    ZeroPump,
    effective_capture_rate,
    pump_rate,
)


class EmptyChannel(ValueError):
    """A correlation was requested on a stream with an empty channel."""


@dataclass(frozen=True)
class G2ModelParams:
    """Parameters of g2(tau) = 1 - (1+a) e^{-|tau|/tau1} + a e^{-|tau|/tau2}.

    tau1 is the antibunching time, a and tau2 describe bunching from shelving
    intermittency.  Times in ns.
    """

    a: float
    tau1: float
    tau2: float

    def __post_init__(self) -> None:
        if not (self.a >= 0.0 and math.isfinite(self.a)):
            raise ValueError("bunching amplitude a must be finite and >= 0")
        if not (self.tau1 > 0.0 and math.isfinite(self.tau1)):
            raise ValueError("tau1 must be finite and > 0")
        if not (self.tau2 > 0.0 and math.isfinite(self.tau2)):
            raise ValueError("tau2 must be finite and > 0")


@dataclass
class G2Histogram:
    """Normalized g2 estimate on symmetric delay bins.

    taus are bin centers in ns (center bin at 0), values the normalized
    estimates, raw_coincidences the unnormalized pair counts.
    """

    bin_width: float
    taus: np.ndarray
    values: np.ndarray
    raw_coincidences: np.ndarray
    acquisition_time: float
    rate_a: float
    rate_b: float

    def errors(self) -> np.ndarray:
        """Poisson standard errors on the normalized values."""
        norm = self.rate_a * self.rate_b * (self.bin_width * 1e-9) * self.acquisition_time
        return np.sqrt(np.clip(self.raw_coincidences, 1.0, None)) / norm

    def folded(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Average bins at +tau and -tau; returns (|tau|, g2, sigma)."""
        n_side = (self.taus.size - 1) // 2
        center = n_side
        taus = [0.0]
        vals = [self.values[center]]
        raw = [float(self.raw_coincidences[center])]
        for k in range(1, n_side + 1):
            taus.append(k * self.bin_width)
            vals.append(0.5 * (self.values[center - k] + self.values[center + k]))
            raw.append(float(self.raw_coincidences[center - k] + self.raw_coincidences[center + k]))
        norm = self.rate_a * self.rate_b * (self.bin_width * 1e-9) * self.acquisition_time
        sig = np.sqrt(np.clip(np.asarray(raw), 1.0, None)) / np.asarray(
            [norm] + [2.0 * norm] * n_side
        )
        return np.asarray(taus), np.asarray(vals), sig


@njit(cache=True)
def _count_delays(t_a, t_b, half_width_ps, bin_ps, n_side, out):
    """Histogram t_b - t_a for all pairs within +-half_width_ps.

    out has 2*n_side+1 bins; bin k covers delays around (k-n_side)*bin_ps.
    Two-pointer sweep: linear in pairs inside the window.
    """
    nb = t_b.shape[0]
    lo = 0
    for i in range(t_a.shape[0]):
        ta = t_a[i]
        while lo < nb and t_b[lo] < ta - half_width_ps:
            lo += 1
        j = lo
        while j < nb and t_b[j] <= ta + half_width_ps:
            d = t_b[j] - ta
            idx = np.int64(np.floor(d / bin_ps + 0.5)) + n_side
            if 0 <= idx <= 2 * n_side:
                out[idx] += 1
            j += 1


def estimate_g2(
    stream: PhotonStream,
    bin_width_ns: float,
    max_tau_ns: float,
    acquisition_time_s: float | None = None,
) -> G2Histogram:
    """g2(tau) histogram from a photon stream.

    Delays are t_B - t_A over cross-channel pairs within +-max_tau_ns, on
    bins of bin_width_ns centered at 0.  Uncorrelated Poisson streams give
    values -> 1.  acquisition_time_s defaults to the stream duration.
    """
    t_a = np.ascontiguousarray(stream.channel_times(0))
    t_b = np.ascontiguousarray(stream.channel_times(1))
    if t_a.size == 0 or t_b.size == 0:
        raise EmptyChannel("both detector channels need at least one record")
    t_acq = stream.duration_s if acquisition_time_s is None else acquisition_time_s
    if not t_acq > 0:
        raise ValueError("acquisition time must be > 0")
    n_side = max(1, int(math.ceil(max_tau_ns / bin_width_ns)))
    bin_ps = bin_width_ns * 1e3
    half_width_ps = (n_side + 0.5) * bin_ps
    raw = np.zeros(2 * n_side + 1, dtype=np.int64)
    _count_delays(t_a.astype(np.int64), t_b.astype(np.int64), half_width_ps, bin_ps, n_side, raw)
    return _finalize_hist(raw, n_side, bin_width_ns, t_a.size, t_b.size, t_acq)


def _finalize_hist(raw, n_side, bin_width_ns, n_a, n_b, t_acq):
    rate_a = n_a / t_acq
    rate_b = n_b / t_acq
    norm = rate_a * rate_b * (bin_width_ns * 1e-9) * t_acq
    taus = (np.arange(2 * n_side + 1) - n_side) * bin_width_ns
    return G2Histogram(
        bin_width=bin_width_ns,
        taus=taus,
        values=raw / norm,
        raw_coincidences=raw,
        acquisition_time=t_acq,
        rate_a=rate_a,
        rate_b=rate_b,
    )


def estimate_g2_streaming(
    ensemble: EmitterEnsemble,
    detection: DetectionConfig,
    duration_s: float,
    seed: int,
    bin_width_ns: float,
    max_tau_ns: float,
) -> G2Histogram:
    """Simulate and correlate chunk by chunk, with bounded memory.

    Pairs spanning chunk boundaries are recovered by carrying the trailing
    max_tau window of each chunk and subtracting the double-counted
    carry-carry pairs (inclusion-exclusion).
    """
    n_side = max(1, int(math.ceil(max_tau_ns / bin_width_ns)))
    bin_ps = bin_width_ns * 1e3
    half_width_ps = (n_side + 0.5) * bin_ps
    raw = np.zeros(2 * n_side + 1, dtype=np.int64)
    carry_a = np.empty(0, dtype=np.int64)
    carry_b = np.empty(0, dtype=np.int64)
    n_a = 0
    n_b = 0
    for t_ps, ch in iter_stream_chunks(ensemble, detection, duration_s, seed):
        t_a = t_ps[ch == 0]
        t_b = t_ps[ch == 1]
        n_a += t_a.size
        n_b += t_b.size
        all_a = np.concatenate([carry_a, t_a])
        all_b = np.concatenate([carry_b, t_b])
        _count_delays(all_a, all_b, half_width_ps, bin_ps, n_side, raw)
        if carry_a.size and carry_b.size:
            dup = np.zeros_like(raw)
            _count_delays(carry_a, carry_b, half_width_ps, bin_ps, n_side, dup)
            raw -= dup
        if all_a.size or all_b.size:
            t_end = max(
                all_a[-1] if all_a.size else -(2**62),
                all_b[-1] if all_b.size else -(2**62),
            )
            keep_from = t_end - int(2 * half_width_ps)
            carry_a = all_a[np.searchsorted(all_a, keep_from):].copy()
            carry_b = all_b[np.searchsorted(all_b, keep_from):].copy()
    if n_a == 0 or n_b == 0:
        raise EmptyChannel("both detector channels need at least one record")
    return _finalize_hist(raw, n_side, bin_width_ns, n_a, n_b, duration_s)


def g2_model(params: G2ModelParams, tau: np.ndarray | float) -> np.ndarray | float:
    """g2(tau) = 1 - (1+a) e^{-|tau|/tau1} + a e^{-|tau|/tau2}; exactly 0 at tau=0."""
    at = np.abs(np.asarray(tau, dtype=float))
    out = (
        1.0
        - (1.0 + params.a) * np.exp(-at / params.tau1)
        + params.a * np.exp(-at / params.tau2)
    )
    return out if out.ndim else float(out)


def g2_from_rates(rates: TransitionRates, exc: Excitation) -> G2ModelParams:
    """Model parameters from the transition rates at a given excitation.

    a = k12 k23 / (k31 (k12 + k21)) and tau2 = (k31 + k12 k23/(k12+k21))^-1,
    with k23 the effective capture rate.  tau1 = 1/(k12+k21) is the standard
    two-level pumping result; all three are leading-order expressions, exact
    in the limit k23, k31 << k12 + k21.
    """
    k12 = pump_rate(rates, exc)
    if k12 <= 0.0:
        raise ZeroPump("g2_from_rates requires nonzero pumping")
    k23 = effective_capture_rate(rates, exc)
    denom = k12 + rates.k21
    a = k12 * k23 / (rates.k31 * denom)
    tau2 = 1.0 / (rates.k31 + k12 * k23 / denom)
    return G2ModelParams(a=a, tau1=1.0 / denom, tau2=tau2)


def generator_matrix(rates: TransitionRates, exc: Excitation) -> np.ndarray:
    """Column-stochastic generator of the three-level CTMC at exc."""
    k12 = pump_rate(rates, exc)
    k23 = effective_capture_rate(rates, exc)
    return np.array(
        [
            [-k12, rates.k21, rates.k31],
            [k12, -(rates.k21 + k23), 0.0],
            [0.0, k23, -rates.k31],
        ]
    )


def scale_for_n_emitters(single: G2ModelParams, n: int, rho: float = 1.0):
    """g2 of n independent emitters with signal fraction rho.

    Returns a callable g2_n(tau) = 1 + rho^2 (g2_1(tau) - 1)/n.  At rho=1 and
    vanishing bunching, g2_n(0) = 1 - 1/n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < rho <= 1.0:
        raise ValueError("signal fraction rho must be in (0, 1]")

    def g2_n(tau):
        return 1.0 + rho * rho * (g2_model(single, tau) - 1.0) / n

    return g2_n
