"""Charge conversion under a square-wave bias.

Simulates the ensemble PL response for several pump powers and high-bias
levels, fits the two edges and tabulates gamma_0-, gamma_-0 and tau_charge.
"""

import argparse
from pathlib import Path

import numpy as np

from vvstark.export import Column, csv_text, line_plot
from vvstark.fitting import fit
from vvstark.kinetics import RateModel, step_response_trace


def edge_fits(model, power, v_high, n_cycles, seed):
    r = step_response_trace(model, power, 0.05 * 2.5 / power, n_cycles, seed, v_high=v_high)
    rows = []
    for name, (t, occ) in (("exp_decay", r.to_dark()), ("sigmoid", r.to_bright())):
        sigma = np.sqrt(np.maximum(occ * (1 - occ), 1 / n_cycles) / n_cycles)
        rows.append(fit(name, t, occ, sigma))
    return r, rows


def main(out, n_cycles, seed):
    out.mkdir(parents=True, exist_ok=True)
    model = RateModel()
    powers = np.array([0.3, 0.6, 1.0, 2.5, 5.0, 10.0, 15.0])
    g0m, gm0, tau, tau_ci = [], [], [], []
    for k, p in enumerate(powers):
        r, (dec, sig) = edge_fits(model, p, model.v_high, n_cycles, seed + k)
        g0m.append(dec["rate"])
        gm0.append(sig["rate"])
        tau.append(sig["delay"])
        tau_ci.append(sig.ci95[1])
        if p == 2.5:
            (out / "step_trace_P2.5.csv").write_text(csv_text(
                [Column("t", "us", r.time), Column("occupancy", "", r.occupancy),
                 Column("pl", "counts/bin", r.pl)]))
    (out / "rates_vs_power.csv").write_text(csv_text(
        [Column("power", "mW/um^2", powers), Column("gamma_0m", "1/us", g0m),
         Column("gamma_m0", "1/us", gm0), Column("tau_charge", "us", tau),
         Column("tau_charge_ci95", "us", tau_ci)]))
    (out / "rates_vs_power.svg").write_text(line_plot(
        [("gamma_0-", powers, g0m, "points"), ("gamma_-0", powers, gm0, "points")],
        title="Switching rates", xlabel="power (mW/um^2)", ylabel="rate (1/us)"))

    v_high = np.array([6.0, 8.0, 10.0, 12.0])
    tv = [edge_fits(model, 2.5, vh, n_cycles, seed + 100 + k)[1][1]["delay"]
          for k, vh in enumerate(v_high)]
    (out / "delay_vs_bias.csv").write_text(csv_text(
        [Column("v_high", "V", v_high), Column("tau_charge", "us", tv)]))
    (out / "delay_vs_bias.svg").write_text(line_plot(
        [("tau_charge", v_high, tv, "points")], title="Charging delay at 2.5 mW/um^2",
        xlabel="V+ (V)", ylabel="tau (us)"))
    print("gamma_0- at 15 mW/um^2: %.3f 1/us" % g0m[-1])
    print("tau_charge vs V+: " + ", ".join(f"{t:.3f}" for t in tv))


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("out/charge_kinetics"))
    p.add_argument("--cycles", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    main(a.out, a.cycles, a.seed)
