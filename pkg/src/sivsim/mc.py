"""Stochastic photon-stream simulation of three-level emitter ensembles.

Trajectories are exact event-driven (Gillespie) samples of the continuous
time Markov chain over states {1, 2, 3}; every |2>->|1> transition emits a
photon, thinned by the detection efficiency, split between two detector
channels, mixed with Poisson background, jittered, and dead-time filtered.

Time is simulated in ns within fixed chunks and emitted as absolute
picosecond timestamps, so arbitrarily long runs never lose resolution.
Identical (config, seed) reproduce identical output bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numba import njit

from . import rng
from .rates import Excitation, TransitionRates, effective_capture_rate, emission_rate, pump_rate

MEMORY_BUDGET_RECORDS = 2**28  # default in-memory record cap per run
_CHUNK_TARGET_RECORDS = 2_000_000
_JITTER_CLIP_SIGMAS = 6.0  # Gaussian jitter is clipped here (mass ~2e-9)


class CapacityExceeded(RuntimeError):
    """Expected record count exceeds the configured memory budget."""


@dataclass(frozen=True)
class EmitterEnsemble:
    """n_emitters identical, independent emitters under a common excitation."""

    n_emitters: int
    rates: TransitionRates
    exc: Excitation

    def __post_init__(self) -> None:
        if self.n_emitters < 1:
            raise ValueError("n_emitters must be >= 1")


@dataclass(frozen=True)
class DetectionConfig:
    """Detector chain: efficiency, per-channel background, HBT split, timing.

    background_rate is counts/s on each channel; jitter and dead time are in
    picoseconds and default to off.
    """

    efficiency: float = 0.05
    background_rate: float = 300.0
    split_ratio: float = 0.5
    jitter_sigma_ps: float = 0.0
    dead_time_ps: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must be in [0, 1]")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0, 1)")
        if self.background_rate < 0 or self.jitter_sigma_ps < 0 or self.dead_time_ps < 0:
            raise ValueError("background_rate, jitter_sigma_ps, dead_time_ps must be >= 0")


@dataclass(frozen=True)
class ExcitationSchedule:
    """Piecewise-constant excitation: segments of (duration_s, Excitation)."""

    segments: tuple[tuple[float, Excitation], ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        for dur, _ in self.segments:
            if not dur > 0:
                raise ValueError("segment durations must be > 0")

    @property
    def total_s(self) -> float:
        return sum(dur for dur, _ in self.segments)


@dataclass(frozen=True)
class PulseConfig:
    """Pulsed-excitation timing for decay histograms.

    pulse_energy_scale is the relative pump fluence per pulse; decay sampling
    conditions on the detected-photon count, so it is carried as metadata.
    """

    rep_rate_mhz: float = 80.0
    pulse_energy_scale: float = 1.0
    irf_sigma_ps: float = 35.0
    window_ns: float = 12.5

    def __post_init__(self) -> None:
        if not self.rep_rate_mhz > 0:
            raise ValueError("rep_rate_mhz must be > 0")
        if self.irf_sigma_ps < 0:
            raise ValueError("irf_sigma_ps must be >= 0")
        if not 0 < self.window_ns <= self.period_ns + 1e-9:
            raise ValueError("window_ns must be in (0, 1/rep_rate]")

    @property
    def period_ns(self) -> float:
        return 1e3 / self.rep_rate_mhz


@dataclass
class PhotonStream:
    """Time-ordered detection records: ps timestamps plus channel (0=A, 1=B)."""

    t_ps: np.ndarray
    channel: np.ndarray
    duration_s: float

    def __len__(self) -> int:
        return self.t_ps.size

    def channel_times(self, ch: int) -> np.ndarray:
        return self.t_ps[self.channel == ch]

    def validate(self) -> None:
        """Check per-channel monotonicity (used on externally read streams)."""
        for ch in (0, 1):
            t = self.channel_times(ch)
            if t.size > 1 and np.any(np.diff(t) < 0):
                raise ValueError(f"channel {ch} timestamps are not nondecreasing")


# --------------------------------------------------------------------------
# Gillespie kernel
# --------------------------------------------------------------------------

@njit(cache=True)
def _emitter_chunk(st, state, k12, k21, k23, k31, dur_ns, eff, split, out_t, out_ch):
    """One emitter over one chunk.  Returns (n_written, state, n_events).

    n_written = -1 signals output overflow; the caller retries the chunk from
    a saved copy of the rng state with a larger buffer.  Event clocks are
    exponential, so discarding the overshoot past dur_ns is exact.
    """
    n = 0
    n_events = 0
    cap = out_t.shape[0]
    t = 0.0
    if k12 <= 0.0 and state == 1:
        return 0, state, 0
    while True:
        if state == 1:
            t += rng.next_exponential(st, k12)
            if t >= dur_ns:
                break
            state = 2
        elif state == 2:
            tot = k21 + k23
            t += rng.next_exponential(st, tot)
            if t >= dur_ns:
                break
            if k23 <= 0.0 or rng.next_double(st) * tot < k21:
                state = 1
                if eff > 0.0:
                    if eff >= 1.0 or rng.next_double(st) < eff:
                        if n >= cap:
                            return -1, state, n_events
                        out_t[n] = t
                        out_ch[n] = 0 if rng.next_double(st) < split else 1
                        n += 1
            else:
                state = 3
        else:
            t += rng.next_exponential(st, k31)
            if t >= dur_ns:
                break
            state = 1
        n_events += 1
    return n, state, n_events


@njit(cache=True)
def _fill_uniform_times(st, out, dur_ns):
    for i in range(out.shape[0]):
        out[i] = rng.next_double(st) * dur_ns


@njit(cache=True)
def _dead_time_mask(t_ps, channel, dead_ps, last_kept):
    """Keep records spaced >= dead_ps per channel; last_kept carries state."""
    n = t_ps.shape[0]
    keep = np.ones(n, dtype=np.bool_)
    for i in range(n):
        ch = channel[i]
        if t_ps[i] - last_kept[ch] < dead_ps:
            keep[i] = False
        else:
            last_kept[ch] = t_ps[i]
    return keep


class _EmitterBank:
    """Per-emitter rng streams and CTMC states, persisted across chunks."""

    def __init__(self, n_emitters: int, seed: int):
        self.states = np.ones(n_emitters, dtype=np.int64)
        self.rng_states = [
            rng.init_state(rng.derive_seed(seed, rng.STREAM_EMITTER, i))
            for i in range(n_emitters)
        ]

    def run_chunk(self, k12, k21, k23, k31, chunk_ns, eff, split, expected_per_emitter):
        cap = int(expected_per_emitter * 1.3 + 8.0 * math.sqrt(expected_per_emitter) + 64)
        times = []
        channels = []
        total_events = 0
        for i, st in enumerate(self.rng_states):
            buf_cap = cap
            while True:
                saved = st.copy()
                out_t = np.empty(buf_cap, dtype=np.float64)
                out_ch = np.empty(buf_cap, dtype=np.uint8)
                n, state, n_ev = _emitter_chunk(
                    st, self.states[i], k12, k21, k23, k31, chunk_ns, eff, split,
                    out_t, out_ch,
                )
                if n >= 0:
                    self.states[i] = state
                    total_events += n_ev
                    if n:
                        times.append(out_t[:n])
                        channels.append(out_ch[:n])
                    break
                st[:] = saved  # overflow: replay the chunk with a larger buffer
                buf_cap *= 2
        if times:
            return np.concatenate(times), np.concatenate(channels), total_events
        return (np.empty(0, dtype=np.float64), np.empty(0, dtype=np.uint8), total_events)


def _chunk_plan(duration_s: float, total_rate_per_s: float) -> float:
    """Deterministic chunk length (s) keeping ~2e6 records per chunk."""
    if total_rate_per_s <= 0:
        return duration_s
    chunk = _CHUNK_TARGET_RECORDS / total_rate_per_s
    return float(min(duration_s, max(min(chunk, 20.0), 1e-4)))


def iter_stream_chunks(
    ensemble: EmitterEnsemble,
    detection: DetectionConfig,
    duration_s: float,
    seed: int,
    count_events: list | None = None,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (t_ps, channel) arrays in global time order, chunk by chunk.

    The concatenation of all chunks is the full stream; chunking bounds
    memory for long acquisitions.  If count_events is a list, the total
    number of Gillespie transitions is accumulated into count_events[0].
    """
    if not duration_s > 0:
        raise ValueError("duration_s must be > 0")
    r, exc = ensemble.rates, ensemble.exc
    k12 = pump_rate(r, exc)
    k23 = effective_capture_rate(r, exc)
    em_rate = emission_rate(r, exc) * 1e9  # photons/s per emitter
    det_rate = ensemble.n_emitters * detection.efficiency * em_rate
    total_rate = det_rate + 2.0 * detection.background_rate

    chunk_s = _chunk_plan(duration_s, total_rate)
    n_chunks = max(1, int(math.ceil(duration_s / chunk_s - 1e-9)))
    chunk_s = duration_s / n_chunks

    bank = _EmitterBank(ensemble.n_emitters, seed)
    bg_states = [
        rng.init_state(rng.derive_seed(seed, rng.STREAM_BACKGROUND_A, 0)),
        rng.init_state(rng.derive_seed(seed, rng.STREAM_BACKGROUND_B, 0)),
    ]
    jit_state = rng.init_state(rng.derive_seed(seed, rng.STREAM_JITTER, 0))

    hold_t = np.empty(0, dtype=np.int64)
    hold_ch = np.empty(0, dtype=np.uint8)
    w_ps = (
        int(_JITTER_CLIP_SIGMAS * detection.jitter_sigma_ps) + 1
        if detection.jitter_sigma_ps > 0
        else 0
    )
    last_kept = np.full(2, np.iinfo(np.int64).min // 2, dtype=np.int64)
    chunk_ns = chunk_s * 1e9
    exp_per_emitter = detection.efficiency * em_rate * chunk_s

    for ci in range(n_chunks):
        offset_ps = int(round(ci * chunk_ns * 1e3))
        t_ns, ch, n_ev = bank.run_chunk(
            k12, r.k21, k23, r.k31, chunk_ns,
            detection.efficiency, detection.split_ratio, exp_per_emitter,
        )
        if count_events is not None:
            count_events[0] += n_ev
        parts_t = [t_ns]
        parts_ch = [ch]
        for bch in (0, 1):
            n_bg = rng.next_poisson(bg_states[bch], detection.background_rate * chunk_s)
            if n_bg:
                bg_t = np.empty(n_bg, dtype=np.float64)
                _fill_uniform_times(bg_states[bch], bg_t, chunk_ns)
                parts_t.append(bg_t)
                parts_ch.append(np.full(n_bg, bch, dtype=np.uint8))
        t_all = np.concatenate(parts_t)
        ch_all = np.concatenate(parts_ch)
        if detection.jitter_sigma_ps > 0 and t_all.size:
            jit = np.empty(t_all.size, dtype=np.float64)
            rng.fill_normals(jit_state, jit, detection.jitter_sigma_ps * 1e-3)
            clip = _JITTER_CLIP_SIGMAS * detection.jitter_sigma_ps * 1e-3
            np.clip(jit, -clip, clip, out=jit)
            t_all = t_all + jit
        t_ps = offset_ps + np.round(t_all * 1e3).astype(np.int64)
        np.clip(t_ps, 0, None, out=t_ps)
        if hold_t.size:
            t_ps = np.concatenate([hold_t, t_ps])
            ch_all = np.concatenate([hold_ch, ch_all])
        order = np.lexsort((ch_all, t_ps))
        t_ps, ch_all = t_ps[order], ch_all[order]
        final = ci == n_chunks - 1
        if not final and w_ps:
            cut = int(round((ci + 1) * chunk_ns * 1e3)) - w_ps
            split_at = np.searchsorted(t_ps, cut, side="left")
            hold_t, hold_ch = t_ps[split_at:].copy(), ch_all[split_at:].copy()
            t_ps, ch_all = t_ps[:split_at], ch_all[:split_at]
        else:
            hold_t = np.empty(0, dtype=np.int64)
            hold_ch = np.empty(0, dtype=np.uint8)
        if detection.dead_time_ps > 0 and t_ps.size:
            keep = _dead_time_mask(t_ps, ch_all, int(detection.dead_time_ps), last_kept)
            t_ps, ch_all = t_ps[keep], ch_all[keep]
        yield t_ps, ch_all


def expected_record_count(
    ensemble: EmitterEnsemble, detection: DetectionConfig, duration_s: float
) -> float:
    em = emission_rate(ensemble.rates, ensemble.exc) * 1e9
    return (
        ensemble.n_emitters * detection.efficiency * em
        + 2.0 * detection.background_rate
    ) * duration_s


def simulate_stream(
    ensemble: EmitterEnsemble,
    detection: DetectionConfig,
    duration_s: float,
    seed: int,
    memory_budget: int = MEMORY_BUDGET_RECORDS,
) -> PhotonStream:
    """Full in-memory photon stream; raises CapacityExceeded over budget."""
    expected = expected_record_count(ensemble, detection, duration_s)
    if expected > memory_budget:
        raise CapacityExceeded(
            f"expected ~{expected:.3g} records exceeds budget {memory_budget}; "
            "use iter_stream_chunks or a streaming writer"
        )
    parts = list(iter_stream_chunks(ensemble, detection, duration_s, seed))
    t_ps = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, np.int64)
    ch = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.uint8)
    return PhotonStream(t_ps=t_ps, channel=ch, duration_s=duration_s)


def detected_rate_kcps(
    rates: TransitionRates,
    exc: Excitation,
    n_emitters: int,
    detection: DetectionConfig,
) -> float:
    """Analytic detected count rate in kcounts/s, background included."""
    em = emission_rate(rates, exc) * 1e9
    return (n_emitters * detection.efficiency * em + 2.0 * detection.background_rate) / 1e3


def simulate_time_trace(
    ensemble: EmitterEnsemble,
    detection: DetectionConfig,
    schedule: ExcitationSchedule,
    bin_width_s: float,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Binned detected counts across a piecewise-constant excitation schedule.

    Segment boundaries must align to bin edges.  The emitter state carries
    over between segments, so switching transients are captured.  Returns
    (bin_centers_s, counts).
    """
    if not bin_width_s > 0:
        raise ValueError("bin_width_s must be > 0")
    n_bins_total = 0
    for dur, _ in schedule.segments:
        nb = dur / bin_width_s
        if abs(nb - round(nb)) > 1e-9 * max(1.0, nb):
            raise ValueError("segment durations must be integer multiples of bin_width_s")
        n_bins_total += int(round(nb))
    counts = np.zeros(n_bins_total, dtype=np.int64)

    bank = _EmitterBank(ensemble.n_emitters, seed)
    bg_states = [
        rng.init_state(rng.derive_seed(seed, rng.STREAM_BACKGROUND_A, 0)),
        rng.init_state(rng.derive_seed(seed, rng.STREAM_BACKGROUND_B, 0)),
    ]
    r = ensemble.rates
    bin_start = 0
    t0_s = 0.0
    for dur, exc in schedule.segments:
        k12 = pump_rate(r, exc)
        k23 = effective_capture_rate(r, exc)
        em = emission_rate(r, exc) * 1e9
        n_bins = int(round(dur / bin_width_s))
        chunk_s = _chunk_plan(
            dur, ensemble.n_emitters * detection.efficiency * em + 2 * detection.background_rate
        )
        n_chunks = max(1, int(math.ceil(dur / chunk_s - 1e-9)))
        chunk_s = dur / n_chunks
        chunk_ns = chunk_s * 1e9
        exp_per_emitter = detection.efficiency * em * chunk_s
        for ci in range(n_chunks):
            t_ns, _, _ = bank.run_chunk(
                k12, r.k21, k23, r.k31, chunk_ns,
                detection.efficiency, detection.split_ratio, exp_per_emitter,
            )
            t_s = t0_s + ci * chunk_s + t_ns * 1e-9
            for bch in (0, 1):
                n_bg = rng.next_poisson(bg_states[bch], detection.background_rate * chunk_s)
                if n_bg:
                    bg_t = np.empty(n_bg, dtype=np.float64)
                    _fill_uniform_times(bg_states[bch], bg_t, chunk_ns)
                    t_s = np.concatenate([t_s, t0_s + ci * chunk_s + bg_t * 1e-9])
            idx = np.floor(t_s / bin_width_s).astype(np.int64)
            np.clip(idx, 0, n_bins_total - 1, out=idx)
            np.add.at(counts, idx, 1)
        bin_start += n_bins
        t0_s += dur
    centers = (np.arange(n_bins_total) + 0.5) * bin_width_s
    return centers, counts


@njit(cache=True)
def _fill_decay_times(st, out, tau_ns, irf_sigma_ns, period_ns, bg_fraction):
    n = out.shape[0]
    for i in range(n):
        if bg_fraction > 0.0 and rng.next_double(st) < bg_fraction:
            t = rng.next_double(st) * period_ns
        else:
            t = rng.next_exponential(st, 1.0 / tau_ns)
            if irf_sigma_ns > 0.0:
                a, _ = rng.next_normal_pair(st)
                t += a * irf_sigma_ns
            t = t % period_ns
            if t < 0.0:
                t += period_ns
        out[i] = t


def simulate_decay_histogram(
    tau_obs_ns: float,
    pulse: PulseConfig,
    n_photons: int,
    background_fraction: float,
    seed: int,
    bin_width_ps: float = 25.0,
) -> tuple[np.ndarray, np.ndarray]:
    """TCSPC-style decay histogram under pulsed excitation.

    Photon delays are exponential(tau_obs_ns) convolved with a Gaussian IRF
    and wrapped modulo the pulse period; a uniform background fraction is
    mixed in.  Returns (bin_centers_ns, counts) over [0, window_ns].
    """
    if not tau_obs_ns > 0:
        raise ValueError("tau_obs_ns must be > 0")
    if n_photons < 1:
        raise ValueError("n_photons must be >= 1")
    if not 0.0 <= background_fraction < 1.0:
        raise ValueError("background_fraction must be in [0, 1)")
    st = rng.init_state(rng.derive_seed(seed, rng.STREAM_DECAY, 0))
    delays = np.empty(n_photons, dtype=np.float64)
    _fill_decay_times(
        st, delays, tau_obs_ns, pulse.irf_sigma_ps * 1e-3, pulse.period_ns,
        background_fraction,
    )
    bin_ns = bin_width_ps * 1e-3
    n_bins = int(math.ceil(pulse.window_ns / bin_ns - 1e-9))
    edges = np.arange(n_bins + 1) * bin_ns
    counts, _ = np.histogram(delays, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, counts
