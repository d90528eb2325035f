"""Calibrated default configuration.

DEFAULT_RATES is the output of the calibration in scripts/calibrate_defaults.py
against the headline observables (saturation powers 8.9 / 20.5 mW, ~6x
red+green gain at 0.4 mW green, green half-suppression power 0.02 mW), with
k21 fixed by the 1.7 ns radiative lifetime and k31, p_re_star held at the
documented values.  Rerunning that script reproduces these numbers.

The g2 demo configuration is a deliberately slow, dim single-emitter setting
used for long correlation runs: the calibrated ensemble config is orders of
magnitude too bright to correlate over 1e4 s of simulated time.
"""

from __future__ import annotations

from .mc import DetectionConfig
from .rates import ConcentrationScaling, Excitation, TransitionRates

RADIATIVE_LIFETIME_NS = 1.7

DEFAULT_RATES = TransitionRates(
    k21=1.0 / RADIATIVE_LIFETIME_NS,
    k23_0=4.70378,
    k31=0.8,
    sigma_re=0.0868858,
    sigma_ge=0.0287533,
    p_ns0=0.0199893,
    p_re_star=50.0,
)

DEFAULT_EXCITATION = Excitation(p_re=10.0, p_ge=0.4)

DEFAULT_DETECTION = DetectionConfig(
    efficiency=0.05,
    background_rate=300.0,
    split_ratio=0.5,
    jitter_sigma_ps=0.0,
    dead_time_ps=0.0,
)

# eta(c) scaling: maximum near 4 ppm under DEFAULT_EXCITATION.  The linear
# donor scaling cannot reproduce the full measured enhancement amplitude and
# its sharp concentration contrast simultaneously; these defaults favor the
# contrast (low- and high-concentration bounds), which the bundled tests pin.
DEFAULT_SCALING = ConcentrationScaling(kappa=0.06, p0=0.25)

# slow single-emitter bunching demo: a ~ 0.8, tau2 ~ 0.56 ms
G2_DEMO_RATES = TransitionRates(
    k21=0.5,
    k23_0=0.004,
    k31=1e-6,
    sigma_re=1e-5,
    sigma_ge=2e-5,
    p_ns0=1.0,
    p_re_star=1e9,
)
G2_DEMO_EXCITATION = Excitation(p_re=10.0, p_ge=0.0)
G2_DEMO_DETECTION = DetectionConfig(
    efficiency=0.05,
    background_rate=0.0,
    split_ratio=0.5,
    jitter_sigma_ps=0.0,
    dead_time_ps=0.0,
)

# demo-family emitter carrying the calibrated donor-suppression constants:
# bunching amplitude versus green power follows the calibrated f_GE while the
# correlation model stays in its validity regime (k23, k31 << k12 + k21)
G2_SWEEP_RATES = TransitionRates(
    k21=0.5,
    k23_0=0.004,
    k31=1e-6,
    sigma_re=1e-5,
    sigma_ge=2e-5,
    p_ns0=DEFAULT_RATES.p_ns0,
    p_re_star=50.0,
)
