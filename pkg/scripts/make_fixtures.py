#!/usr/bin/env python3
"""Generate the bundled synthetic example data under src/sivsim/data/.

Saturation series at the measured red/green parameters (421 kcounts/s peak,
8.9 and 20.5 mW saturation powers) with 1% multiplicative noise from the
repo PRNG, ready for `sivsim fit-sat`.
"""

from pathlib import Path

import numpy as np

from sivsim import rng
from sivsim.io import write_table_csv
from sivsim.rates import SaturationParams, saturation_curve

DATA_DIR = Path(__file__).resolve().parent.parent / "src" / "sivsim" / "data"

SERIES = {
    # file name -> (params, noise seed)
    "saturation_re_demo.csv": (SaturationParams(i_inf=421.0, p_sat=8.9, k_bg=2.0), 2024),
    "saturation_ge_demo.csv": (SaturationParams(i_inf=884.0, p_sat=20.5, k_bg=2.0), 2025),
}


def main() -> None:
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    power = np.linspace(0.5, 40.0, 50)
    for name, (params, seed) in SERIES.items():
        clean = np.array([saturation_curve(params, p) for p in power])
        noise = np.empty(power.size)
        state = rng.init_state(rng.derive_seed(seed, rng.STREAM_NOISE, 0))
        rng.fill_normals(state, noise, 0.01)
        noisy = clean * (1.0 + noise)
        write_table_csv(DATA_DIR / name, {"power_mw": power, "counts_kcps": noisy})
        print(f"wrote {DATA_DIR / name}")


if __name__ == "__main__":
    main()
