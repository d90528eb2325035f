"""sivsim: charge-state photophysics of SiV- emitters under dual-color excitation.

Rate-model analysis, exact stochastic photon-stream simulation, correlation
and curve fitting, donor geometry, and the synthetic measurement protocols
that tie them together.
"""

__version__ = "0.1.0"

from .rates import (  # noqa: F401
    ConcentrationScaling,
    Excitation,
    Populations,
    SaturationParams,
    TransitionRates,
    ZeroPump,
    effective_capture_rate,
    emission_rate,
    enhancement_factor,
    eta_vs_concentration,
    pump_rate,
    saturation_curve,
    saturation_params,
    steady_state,
)
from .mc import (  # noqa: F401
    CapacityExceeded,
    DetectionConfig,
    EmitterEnsemble,
    ExcitationSchedule,
    PhotonStream,
    PulseConfig,
    simulate_decay_histogram,
    simulate_stream,
    simulate_time_trace,
)
from .correlation import (  # noqa: F401
    EmptyChannel,
    G2Histogram,
    G2ModelParams,
    estimate_g2,
    g2_from_rates,
    g2_model,
    scale_for_n_emitters,
)
from .fit import (  # noqa: F401
    DataSeries,
    FitResult,
    fit_decay,
    fit_g2,
    fit_saturation,
    fit_shifted_saturation,
    levenberg_marquardt,
)
