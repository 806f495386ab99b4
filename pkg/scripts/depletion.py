"""Charge state versus gate bias and distance from the gate.

Tabulates the VV0 -> VV- switching voltage against distance, the depletion
width against bias, and a state raster over both.
"""

import argparse
from pathlib import Path

import numpy as np

from vvstark.charge import ChargeState, steady_charge_state
from vvstark.electrostatics import (
    BandParameters,
    DeviceGeometry,
    GatePatch,
    depletion_width,
    transition_voltage_for_distance,
)
from vvstark.export import Column, csv_text, heatmap, line_plot
from vvstark.stark import DefectConfig

ORDER = [ChargeState.VV_plus, ChargeState.VV_0, ChargeState.VV_minus, ChargeState.VV_2minus]


def main(out):
    out.mkdir(parents=True, exist_ok=True)
    geo = DeviceGeometry(gates=(GatePatch(-50, 50, -50, 50),))
    bands = BandParameters()
    r = np.linspace(0.5, 20.0, 40)
    v_t = np.array([transition_voltage_for_distance(x, geo, bands) for x in r])
    (out / "transition_voltage.csv").write_text(csv_text(
        [Column("distance", "um", r), Column("v_transition", "V", v_t)]))
    (out / "transition_voltage.svg").write_text(line_plot(
        [("V_t", r, v_t)], title="VV0/VV- switching voltage", xlabel="distance (um)",
        ylabel="V (V)"))

    v = np.linspace(-10.0, 100.0, 111)
    w = np.array([depletion_width(bands.barrier(x), geo) for x in v])
    (out / "depletion_width.csv").write_text(csv_text(
        [Column("v_gate", "V", v), Column("w_d", "um", w)]))

    states = np.empty((r.size, v.size))
    for i, x in enumerate(r):
        d = DefectConfig(position=(0.0, 0.0, x))
        for j, vv in enumerate(v):
            states[i, j] = ORDER.index(steady_charge_state(d, vv, geo, bands))
    (out / "charge_map.svg").write_text(heatmap(
        v, r, states, title="Charge state (0: +, 1: 0, 2: -, 3: 2-)", xlabel="gate bias (V)",
        ylabel="distance (um)"))
    print(f"V_t at 5 um: {transition_voltage_for_distance(5.0, geo, bands):.3f} V")
    print(f"V_t at 10 um: {transition_voltage_for_distance(10.0, geo, bands):.3f} V")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("out/depletion"))
    main(p.parse_args().out)
