"""Stark tuning of a divacancy: common-mode and lateral gate sweeps.

Writes PLE maps versus gate voltage plus the fitted ridge positions.
"""

import argparse
from pathlib import Path

import numpy as np

from vvstark.electrostatics import DeviceGeometry, GridSpec, four_gate_layout, laplace_basis
from vvstark.export import Column, csv_text, heatmap, line_plot
from vvstark.stark import DefectConfig, GateSetting, LaserScan, stark_map


def main(out, grid):
    out.mkdir(parents=True, exist_ok=True)
    geo = DeviceGeometry(gates=four_gate_layout(0.0, 0.0, 0.0))
    defect = DefectConfig(position=(0.0, 0.0, 1.5), strain_splitting=(15.0, 0.0))
    scan = LaserScan(-25.0, 25.0, 0.05)

    common = [GateSetting(v) for v in np.linspace(0.0, -300.0, 61)]
    m = stark_map(defect, geo, common, scan)
    v = np.array([s.v_z for s in common])
    (out / "common_mode_map.svg").write_text(heatmap(
        m.frequency_offset, v, m.intensity, title="Common-mode sweep",
        xlabel="laser detuning (GHz)", ylabel="V_z (V)"))

    # the lateral map needs the Laplace field; one basis serves the whole sweep
    basis = laplace_basis(geo, grid)
    lateral = [GateSetting(0.0, vx) for vx in np.linspace(-100.0, 100.0, 81)]
    lm = stark_map(defect, geo, lateral, scan, field_model="laplace", basis=basis)
    vx = np.array([s.v_x for s in lateral])
    (out / "lateral_map.svg").write_text(heatmap(
        lm.frequency_offset, vx, lm.intensity, title="Differential x sweep",
        xlabel="laser detuning (GHz)", ylabel="V_x (V)"))

    r, lr = m.ridge(), lm.ridge()
    (out / "common_mode_ridge.csv").write_text(csv_text(
        [Column("v_z", "V", v), Column("nu_ex", "GHz", r[:, 0]), Column("nu_ey", "GHz", r[:, 1])]))
    (out / "lateral_ridge.csv").write_text(csv_text(
        [Column("v_x", "V", vx), Column("nu_ex", "GHz", lr[:, 0]),
         Column("nu_ey", "GHz", lr[:, 1])]))
    (out / "splitting.svg").write_text(line_plot(
        [("Ex - Ey, lateral", vx, lr[:, 0] - lr[:, 1])], title="Orbital splitting",
        xlabel="V_x (V)", ylabel="splitting (GHz)"))
    shift = np.nanmean(r, axis=1)
    print(f"common-mode shift over the sweep: {shift[-1] - shift[0]:.3f} GHz")
    print(f"lateral splitting range: {np.nanmin(lr[:, 0] - lr[:, 1]):.2f} to "
          f"{np.nanmax(lr[:, 0] - lr[:, 1]):.2f} GHz")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("out/stark_tuning"))
    p.add_argument("--nx", type=int, default=256)
    p.add_argument("--nz", type=int, default=128)
    a = p.parse_args()
    main(a.out, GridSpec(a.nx, a.nz))
