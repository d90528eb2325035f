#!/usr/bin/env python3
"""Run the full set of synthetic experiments and write tables to out/.

Covers the saturation sweeps (red, green, combined), the toggled-excitation
trace, the green-power response at several red levels, the enhancement vs
nitrogen concentration scan, the lifetime-vs-wavelength sweep, and the donor
nearest-neighbor statistics.  Output is CSV plus a JSON summary per block.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from sivsim import donors, protocols
from sivsim.defaults import (
    DEFAULT_DETECTION,
    DEFAULT_EXCITATION,
    DEFAULT_RATES,
    DEFAULT_SCALING,
)
from sivsim.fit import fit_saturation
from sivsim.io import dump_json, write_table_csv
from sivsim.protocols import LifetimeSweepSpec, SweepSpec
from sivsim.rates import saturation_params


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=20240501)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed

    # saturation curves: RE alone, GE alone, CRGE with 0.4 mW green
    grid = tuple(np.linspace(0.25, 40.0, 40))
    summary = {}
    for name, spec in {
        "re": SweepSpec("RE", 0.0, grid),
        "ge": SweepSpec("GE", 0.0, grid),
        "crge": SweepSpec("CRGE", 0.4, grid),
    }.items():
        series = protocols.run_saturation_sweep(
            DEFAULT_RATES, spec, detection=DEFAULT_DETECTION, seed=seed
        )
        params, res = fit_saturation(series)
        write_table_csv(out / f"saturation_{name}.csv",
                        {"power_mw": series.x, "counts_kcps": series.y})
        summary[name] = {
            "i_inf_kcps": params.i_inf,
            "p_sat_mw": params.p_sat,
            "converged": bool(res.converged),
        }
    summary["crge_gain_fitted"] = summary["crge"]["i_inf_kcps"] / summary["re"]["i_inf_kcps"]
    summary["crge_gain_model"] = protocols.crge_gain(DEFAULT_RATES)
    summary["psat_model"] = {
        "re": saturation_params(DEFAULT_RATES, "RE").p_sat,
        "ge": saturation_params(DEFAULT_RATES, "GE").p_sat,
    }
    dump_json(out / "saturation_summary.json", summary)

    # toggled red / red+green trace
    trace = protocols.run_crge_trace(
        DEFAULT_RATES, p_re=10.0, p_ge=0.4, segment_s=0.01, n_cycles=3,
        detection=DEFAULT_DETECTION, seed=seed,
    )
    write_table_csv(out / "crge_trace.csv",
                    {"t_s": trace["trace_t_s"], "counts_kcps": trace["trace_kcps"]})
    dump_json(out / "crge_trace_summary.json",
              {k: trace[k] for k in ("i_re_kcps", "i_crge_kcps", "delta_i_kcps", "eta")})

    # green response at fixed red levels
    rows = protocols.run_ge_power_sweep(
        DEFAULT_RATES, (0.2, 5.1, 10.0), np.geomspace(0.02, 2.0, 20)
    )
    for row in rows:
        write_table_csv(out / f"ge_sweep_re{row['p_re_mw']:g}mw.csv",
                        {"p_ge_mw": row["p_ge_mw"], "delta_i_kcps": row["delta_i_kcps"]})
    dump_json(out / "ge_sweep_summary.json",
              {"levels": [{k: row[k] for k in ("p_re_mw", "d_inf_kcps", "p_sat_mw")}
                          for row in rows]})

    # enhancement vs concentration
    conc = protocols.run_concentration_sweep(
        np.geomspace(0.15, 500.0, 40), DEFAULT_EXCITATION, DEFAULT_SCALING, DEFAULT_RATES
    )
    write_table_csv(out / "concentration_sweep.csv",
                    {"c_ppm": conc["c_ppm"], "eta": conc["eta"]})
    i_max = int(np.argmax(conc["eta"]))
    dump_json(out / "concentration_summary.json",
              {"c_max_ppm": float(conc["c_ppm"][i_max]),
               "eta_max": float(conc["eta"][i_max])})

    # lifetime vs excitation wavelength
    table = protocols.run_lifetime_sweep(LifetimeSweepSpec(), n_photons=200_000, seed=seed)
    write_table_csv(
        out / "lifetime_sweep.csv",
        {
            "wavelength_nm": [r["wavelength_nm"] for r in table],
            "energy_ev": [r["energy_ev"] for r in table],
            "tau_true_ns": [r["tau_true_ns"] for r in table],
            "tau_fit_ns": [r["tau_fit_ns"] for r in table],
        },
    )

    # donor geometry at 4 ppm
    density = donors.ppm_to_density(4.0)
    nn = {}
    for k in (1, 2):
        sampled = donors.sample_nn_distances(density, k, 200_000, seed)
        nn[k] = {"analytic_nm": donors.mean_nn_distance(k, density),
                 "sampled_nm": float(np.mean(sampled))}
    dump_json(out / "donor_geometry.json", {
        "density_nm3": density,
        "neighbors": {str(k): v for k, v in nn.items()},
        "mean_two_nearest_nm": donors.mean_distance_two_nearest(density),
    })

    print(json.dumps(summary, indent=2))
    print(f"outputs in {out}/")


if __name__ == "__main__":
    main()
