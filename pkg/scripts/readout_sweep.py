"""Single-shot charge readout versus gate bias.

Simulates a telegraph trace at the switching voltage, count histograms on
either side of it and the fitted bright population across the sweep.
"""

import argparse
from pathlib import Path

import numpy as np

from vvstark.charge import transition_voltages
from vvstark.electrostatics import DeviceGeometry, GatePatch
from vvstark.export import Column, csv_text, line_plot
from vvstark.kinetics import simulate_telegraph
from vvstark.photons import ReadoutStack, generate_counts, optimal_threshold, population_vs_voltage
from vvstark.stark import DefectConfig


def main(out, seed):
    out.mkdir(parents=True, exist_ok=True)
    stack = ReadoutStack(geometry=DeviceGeometry(gates=(GatePatch(-50, 50, -50, 50),)), seed=seed)
    defect = DefectConfig(position=(0.0, 0.0, 5.0))
    _, v_t = transition_voltages(defect, stack.geometry, stack.bands, stack.levels)

    trace = simulate_telegraph(stack.rates, stack.readout_power, v_t, 6e7, seed, v_threshold=v_t)
    _, series = generate_counts(trace, stack.lambda_bright, stack.lambda_dark,
                                stack.bin_duration, seed + 1)
    t = series.edges[:-1] / 1000.0
    (out / "telegraph.csv").write_text(csv_text(
        [Column("t", "s", t), Column("counts", "counts", series.counts)]))
    (out / "telegraph.svg").write_text(line_plot(
        [("counts", t, series.counts)], title=f"Counts per 8 ms at V = {v_t:.2f} V",
        xlabel="t (s)", ylabel="counts"))

    volts = np.round(np.linspace(v_t - 5.0, v_t + 5.0, 21), 6)
    curve = population_vs_voltage(defect, volts, stack)
    (out / "population.csv").write_text(csv_text(
        [Column("v_gate", "V", volts), Column("p_bright", "", curve.p_bright)],
        (("v_transition_V", f"{v_t:.6f}"),)))
    (out / "population.svg").write_text(line_plot(
        [("p_bright", volts, curve.p_bright, "points")], title="Bright population",
        xlabel="gate bias (V)", ylabel="p_bright"))
    cal = curve.calibration
    thr = optimal_threshold(cal.lambda_dark, cal.lambda_bright)
    print(f"transition voltage {v_t:.3f} V, crossing {curve.crossing():.3f} V")
    print(f"threshold {thr.threshold} counts, fidelity {thr.fidelity:.4f}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("out/readout_sweep"))
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    main(a.out, a.seed)
