"""Command-line runner.

Each subcommand computes all of its artifacts in memory first and only
then writes them, so a failing run leaves no partial outputs.  Exit codes:
0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .charge import ChargeState, fermi_position, steady_charge_state, transition_voltages
from .config import ConfigError, ExperimentConfig, load_config
from .electrostatics import (
    ConvergenceError,
    depletion_width,
    laplace_basis,
    solve_laplace,
    transition_voltage_for_distance,
    uniform_vertical_field,
)
from .export import Column, csv_text, heatmap, line_plot
from .fitting import RankDeficiencyError, fit, get_model
from .kinetics import (
    child_seeds,
    gated_rates,
    rates_from_power,
    simulate_telegraph,
    step_response_trace,
)
from .photons import (
    PhotonHistogram,
    ReadoutStack,
    generate_counts,
    optimal_threshold,
    population_vs_voltage,
)
from .stark import LinearizationError, ple_spectrum, stark_map

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERICAL_ERRORS = (ConvergenceError, RankDeficiencyError, LinearizationError, RuntimeError,
                    FloatingPointError, ArithmeticError, np.linalg.LinAlgError, ValueError)


@dataclass(frozen=True)
class Artifact:
    name: str
    kind: str  # "csv", "svg" or "txt"
    text: str


class Run:
    """Collects artifacts for one subcommand invocation."""

    def __init__(self, command, cfg: ExperimentConfig):
        self.command = command
        self.cfg = cfg
        self.artifacts = []

    @property
    def meta(self):
        return (("toolkit", f"vvstark {__version__}"), ("command", self.command),
                ("config_hash", self.cfg.hash), ("seed", self.cfg.output.seed))

    def table(self, name, columns, extra=()):
        self.artifacts.append(Artifact(name, "csv", csv_text(columns, self.meta + tuple(extra))))

    def plot(self, name, text):
        self.artifacts.append(Artifact(name, "svg", text))

    def text(self, name, body):
        header = "".join(f"# {k}: {v}\n" for k, v in self.meta)
        self.artifacts.append(Artifact(name, "txt", header + body + "\n"))


def _slug(name):
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def _bias_label(s):
    return f"v_z={s.v_z:g} V, v_x={s.v_x:g} V, v_y={s.v_y:g} V"


def _field_for(cfg, setting, defect, basis):
    if cfg.sweep.stark.field_model == "uniform":
        return uniform_vertical_field(setting.v_z, cfg.device)
    volts = setting.gate_voltages(len(cfg.device.gates))
    return basis.field_at(defect.position, volts, cfg.device.back_plane_voltage)


def _basis(cfg):
    if cfg.sweep.stark.field_model == "laplace":
        return laplace_basis(cfg.device, cfg.sweep.grid)
    return None


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve_field(run: Run):
    cfg = run.cfg
    bias = cfg.sweep.field_bias
    geo = cfg.device.with_gate_voltages(bias.gate_voltages(len(cfg.device.gates)))
    sol = solve_laplace(geo, cfg.sweep.grid)
    xx, zz = np.meshgrid(sol.x, sol.z, indexing="ij")
    phi, fx, fz = sol.section()
    extra = (("bias", _bias_label(bias)), ("relative_residual", f"{sol.residual:.3e}"))
    run.table("field_map.csv", [Column("x", "um", xx.ravel()), Column("depth", "um", zz.ravel()),
                                Column("potential", "V", phi.ravel()),
                                Column("f_x", "MV/m", fx.ravel()),
                                Column("f_depth", "MV/m", fz.ravel())], extra)
    rows = [(d.name, sol.field_at(d.position)) for d in cfg.defects]
    run.table("field_at_defects.csv", [
        Column("defect", "", [r[0] for r in rows]),
        Column("f_parallel", "MV/m", [r[1].f_parallel for r in rows]),
        Column("f_perp_x", "MV/m", [r[1].f_perp_x for r in rows]),
        Column("f_perp_y", "MV/m", [r[1].f_perp_y for r in rows]),
        Column("f_uniform", "MV/m", [uniform_vertical_field(bias.v_z, cfg.device).f_parallel] * len(rows)),
    ], extra)
    run.plot("field_map.svg", heatmap(sol.x, sol.z, phi.T, title=f"Potential ({_bias_label(bias)})",
                                      xlabel="x (um)", ylabel="depth (um)", meta=run.meta))


def cmd_stark_sweep(run: Run):
    cfg = run.cfg
    settings = cfg.sweep.stark.settings()
    basis = _basis(cfg)
    seeds = child_seeds(cfg.output.seed, len(cfg.defects))
    for defect, seed in zip(cfg.defects, seeds):
        rng = np.random.default_rng(seed) if defect.strain_jitter > 0 else None
        m = stark_map(defect, cfg.device, settings, cfg.sweep.scan,
                      field_model=cfg.sweep.stark.field_model, basis=basis,
                      grid=cfg.sweep.grid, bands=cfg.bands, levels=cfg.levels, rng=rng)
        ridge = m.ridge()
        tag = _slug(defect.name)
        run.table(f"stark_ridge_{tag}.csv", [
            Column("v_z", "V", [s.v_z for s in settings]),
            Column("v_x", "V", [s.v_x for s in settings]),
            Column("v_y", "V", [s.v_y for s in settings]),
            Column("f_parallel", "MV/m", [f.f_parallel for f in m.fields]),
            Column("f_perp_x", "MV/m", [f.f_perp_x for f in m.fields]),
            Column("f_perp_y", "MV/m", [f.f_perp_y for f in m.fields]),
            Column("charge_state", "", [s.name for s in m.states]),
            Column("bright", "", m.bright),
            Column("nu_ex_offset", "GHz", ridge[:, 0]),
            Column("nu_ey_offset", "GHz", ridge[:, 1]),
            Column("mean_shift", "GHz", ridge.mean(axis=1)),
            Column("splitting", "GHz", ridge[:, 0] - ridge[:, 1]),
        ], (("defect", defect.name), ("zpl_center_GHz", f"{defect.zpl_center:.10g}"),
            ("field_model", cfg.sweep.stark.field_model)))
        n_set, n_f = m.intensity.shape
        run.table(f"stark_map_{tag}.csv", [
            Column("row", "", np.repeat(np.arange(n_set), n_f)),
            Column("v_z", "V", np.repeat([s.v_z for s in settings], n_f)),
            Column("v_x", "V", np.repeat([s.v_x for s in settings], n_f)),
            Column("v_y", "V", np.repeat([s.v_y for s in settings], n_f)),
            Column("laser_offset", "GHz", np.tile(m.frequency_offset, n_set)),
            Column("intensity", "1/GHz", m.intensity.ravel()),
        ], (("defect", defect.name),))
        axis, label = _sweep_axis(settings)
        run.plot(f"stark_map_{tag}.svg", heatmap(
            m.frequency_offset, axis, m.intensity, title=f"PLE vs bias, {defect.name}",
            xlabel="laser detuning (GHz)", ylabel=label, meta=run.meta))


def _sweep_axis(settings):
    for attr in ("v_z", "v_x", "v_y"):
        vals = np.array([getattr(s, attr) for s in settings])
        if np.unique(vals).size == len(settings):
            return vals, f"{attr} (V)"
    return np.arange(len(settings), dtype=float), "sweep index"


def cmd_ple(run: Run):
    cfg = run.cfg
    bias = cfg.sweep.field_bias
    basis = _basis(cfg)
    series = []
    seeds = child_seeds(cfg.output.seed, len(cfg.defects))
    for defect, seed in zip(cfg.defects, seeds):
        rng = np.random.default_rng(seed) if defect.strain_jitter > 0 else None
        f = _field_for(cfg, bias, defect, basis)
        volts = bias.gate_voltages(len(cfg.device.gates))
        gate, _ = cfg.device.nearest_gate(defect.position)
        v_near = volts[cfg.device.gates.index(gate)] if gate is not None else 0.0
        state = steady_charge_state(defect, v_near, cfg.device, cfg.bands, cfg.levels)
        spec = ple_spectrum(defect, f, cfg.sweep.scan, bright=state is ChargeState.VV_0, rng=rng)
        tag = _slug(defect.name)
        run.table(f"ple_{tag}.csv", [Column("laser_offset", "GHz", spec.frequency_offset),
                                     Column("intensity", "1/GHz", spec.intensity)],
                  (("defect", defect.name), ("bias", _bias_label(bias)),
                   ("charge_state", state.name),
                   ("nu_ex_offset_GHz", _opt(spec.transitions.nu_ex, defect.zpl_center)),
                   ("nu_ey_offset_GHz", _opt(spec.transitions.nu_ey, defect.zpl_center))))
        series.append((defect.name, spec.frequency_offset, spec.intensity))
    run.plot("ple.svg", line_plot(series, title=f"PLE ({_bias_label(bias)})",
                                  xlabel="laser detuning (GHz)", ylabel="intensity (1/GHz)",
                                  meta=run.meta))


def _opt(v, ref):
    return "dark" if v is None else f"{v - ref:.10g}"


def cmd_charge_map(run: Run):
    cfg = run.cfg
    r = np.asarray(cfg.sweep.charge.distances)
    v = np.asarray(cfg.sweep.charge.voltages)
    vt = np.array([transition_voltage_for_distance(d, cfg.device, cfg.bands) for d in r])
    bounds = [transition_voltages(float(d), cfg.device, cfg.bands, cfg.levels) for d in r]
    run.table("transition_voltage_vs_distance.csv", [
        Column("distance", "um", r),
        Column("v_transition", "V", vt),
        Column("v_plus_bound", "V", [b[0] for b in bounds]),
        Column("v_minus_bound", "V", [b[1] for b in bounds]),
    ])
    states = np.array([[int(cfg.levels.state_for(fermi_position(d, vv, cfg.device, cfg.bands)))
                        for d in r] for vv in v])
    width = np.array([float(depletion_width(cfg.bands.barrier(vv), cfg.device)) for vv in v])
    run.table("charge_map.csv", [
        Column("v_gate", "V", np.repeat(v, r.size)),
        Column("distance", "um", np.tile(r, v.size)),
        Column("charge", "e", states.ravel()),
        Column("bright", "", (states == 0).ravel()),
    ])
    run.table("depletion_width.csv", [Column("v_gate", "V", v), Column("w_d", "um", width)])
    run.plot("charge_map.svg", heatmap(r, v, (states == 0).astype(float),
                                       title="VV0 (bright) region", xlabel="distance from gate (um)",
                                       ylabel="gate bias (V)", meta=run.meta))
    run.plot("transition_voltage.svg", line_plot([("V_t", r, vt)], title="Transition voltage",
                                                 xlabel="distance from gate (um)",
                                                 ylabel="V_t (V)", meta=run.meta))


def _occ_sigma(occ, n):
    return np.sqrt(np.maximum(occ * (1 - occ), 1.0 / n) / n)


def cmd_step_response(run: Run):
    cfg = run.cfg
    sc = cfg.sweep.step
    model = cfg.kinetics
    jobs = [(p, vh) for p in sc.powers for vh in sc.v_high]
    seeds = child_seeds(cfg.output.seed, len(jobs))
    rows = []
    series_dark, series_bright = [], []
    for (power, vh), seed in zip(jobs, seeds):
        sr = step_response_trace(model, power, sc.bin, sc.n_cycles, seed, v_high=vh)
        t_d, o_d = sr.to_dark()
        t_b, o_b = sr.to_bright()
        f_d = fit("exp_decay", t_d, o_d, _occ_sigma(o_d, sc.n_cycles))
        f_b = fit("sigmoid", t_b, o_b, _occ_sigma(o_b, sc.n_cycles))
        g0m, gm0 = rates_from_power(model, power)
        rows.append((power, vh, g0m, f_d["rate"], f_d.ci95[1], gm0, f_b["rate"], f_b.ci95[2],
                     model.charging_delay(power, vh), f_b["delay"], f_b.ci95[1]))
        if vh == model.v_high or len(sc.v_high) == 1:
            tag = f"P{power:g}_Vh{vh:g}".replace(".", "p")
            analytic = sr.analytic(model)
            run.table(f"step_trace_{tag}.csv", [
                Column("t", "us", sr.time), Column("occupancy", "", sr.occupancy),
                Column("analytic", "", analytic), Column("pl", "counts/bin", sr.pl)],
                (("power_mW_per_um2", f"{power:g}"), ("v_high_V", f"{vh:g}"),
                 ("half_period_us", f"{sr.half_period:.10g}"), ("n_cycles", sc.n_cycles)))
            series_dark.append((f"P={power:g}", t_d, o_d))
            series_bright.append((f"P={power:g}", t_b, o_b))
    cols = list(zip(*rows))
    run.table("step_fits.csv", [
        Column("power", "mW/um^2", cols[0]), Column("v_high", "V", cols[1]),
        Column("gamma_0m_input", "1/us", cols[2]), Column("gamma_0m_fit", "1/us", cols[3]),
        Column("gamma_0m_ci95", "1/us", cols[4]),
        Column("gamma_m0_input", "1/us", cols[5]), Column("gamma_m0_fit", "1/us", cols[6]),
        Column("gamma_m0_ci95", "1/us", cols[7]),
        Column("tau_input", "us", cols[8]), Column("tau_fit", "us", cols[9]),
        Column("tau_ci95", "us", cols[10])])
    run.plot("step_to_dark.svg", line_plot(series_dark, title="Bias step to dark",
                                           xlabel="t (us)", ylabel="VV0 occupancy", meta=run.meta))
    run.plot("step_to_bright.svg", line_plot(series_bright, title="Bias step to bright",
                                             xlabel="t (us)", ylabel="VV0 occupancy",
                                             meta=run.meta))


def cmd_telegraph(run: Run):
    cfg = run.cfg
    tc, ph = cfg.sweep.telegraph, cfg.photon
    s_trace, s_counts = child_seeds(cfg.output.seed, 2)
    trace = simulate_telegraph(cfg.kinetics, tc.power, tc.v_gate, tc.duration, s_trace)
    hist, series = generate_counts(trace, ph.lambda_bright, ph.lambda_dark, ph.bin_duration,
                                   s_counts)
    g0m, gm0 = gated_rates(cfg.kinetics, tc.power, tc.v_gate,
                           0.5 * (cfg.kinetics.v_low + cfg.kinetics.v_high))
    stationary = gm0 / (g0m + gm0) if g0m + gm0 > 0 else float("nan")
    extra = (("power_mW_per_um2", f"{tc.power:g}"), ("v_gate_V", f"{tc.v_gate:g}"),
             ("duration_us", f"{tc.duration:g}"), ("transitions", trace.n_transitions),
             ("bright_fraction", f"{trace.occupancy():.10g}"),
             ("stationary_bright_fraction", f"{stationary:.10g}"))
    run.table("telegraph_counts.csv", [Column("t_start", "ms", series.edges[:-1]),
                                       Column("expected", "counts", series.expected),
                                       Column("counts", "counts", series.counts)], extra)
    run.table("telegraph_histogram.csv", [Column("counts", "counts", hist.values),
                                          Column("occurrences", "bins", hist.occurrences)], extra)
    n = min(series.counts.size, 2000)
    run.plot("telegraph.svg", line_plot([("counts", series.edges[:n], series.counts[:n])],
                                        title="Photon counts per bin", xlabel="t (ms)",
                                        ylabel="counts", meta=run.meta))


def cmd_readout(run: Run):
    cfg = run.cfg
    ph = cfg.photon
    voltages = np.asarray(cfg.sweep.readout.voltages)
    seeds = child_seeds(cfg.output.seed, len(cfg.defects))
    lam_d, lam_b = ph.lambda_dark * ph.bin_duration, ph.lambda_bright * ph.bin_duration
    thr = optimal_threshold(lam_d, lam_b)
    series = []
    for defect, seed in zip(cfg.defects, seeds):
        stack = ReadoutStack(cfg.device, cfg.bands, cfg.levels, cfg.kinetics, ph.readout_power,
                             ph.lambda_bright, ph.lambda_dark, ph.bin_duration, ph.n_bins, seed)
        curve = population_vs_voltage(defect, voltages, stack)
        tag = _slug(defect.name)
        cal = curve.calibration
        extra = (("defect", defect.name), ("v_transition_V", f"{curve.v_threshold:.10g}"),
                 ("calibrated_lambda_dark_counts_per_bin", f"{cal.lambda_dark:.10g}"),
                 ("calibrated_lambda_bright_counts_per_bin", f"{cal.lambda_bright:.10g}"),
                 ("threshold_counts", thr.threshold), ("readout_fidelity", f"{thr.fidelity:.10g}"),
                 ("crossing_V", f"{curve.crossing():.10g}"))
        run.table(f"readout_{tag}.csv", [
            Column("v_gate", "V", voltages), Column("p_bright", "", curve.p_bright),
            Column("p_bright_ci95", "", [f.ci95[2] for f in curve.fits]),
            Column("bright_fraction_by_threshold", "",
                   [_above(h, thr.threshold) for h in curve.histograms])], extra)
        hv, hk, ho = [], [], []
        for vv, h in zip(voltages, curve.histograms):
            hv += [vv] * h.values.size
            hk += list(h.values)
            ho += list(h.occurrences)
        run.table(f"readout_histograms_{tag}.csv", [Column("v_gate", "V", hv),
                                                    Column("counts", "counts", hk),
                                                    Column("occurrences", "bins", ho)], extra)
        run.text(f"readout_calibration_{tag}.txt", cal.report())
        series.append((defect.name, voltages, curve.p_bright))
    run.plot("readout.svg", line_plot(series, title="Bright-state population", xlabel="gate bias (V)",
                                      ylabel="p_bright", meta=run.meta, markers=True))


def _above(hist: PhotonHistogram, threshold):
    total = hist.occurrences.sum()
    return float(hist.occurrences[hist.values >= threshold].sum() / total) if total else float("nan")


def _read_columns(path, names):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise ConfigError("data file is empty", "fit.data", source=path)
    header = [h.split(" [", 1)[0].strip() for h in rows[0]]
    units = [h.split(" [", 1)[1].rstrip("] ") if " [" in h else "" for h in rows[0]]
    out = []
    for n in names:
        if n is None:
            out.append((None, ""))
            continue
        if n not in header:
            raise ConfigError(f"column {n!r} not in {header}", "fit", source=path)
        i = header.index(n)
        try:
            out.append((np.array([float(r[i]) for r in rows[1:]]), units[i]))
        except ValueError as exc:
            raise ConfigError(f"non-numeric data in column {n!r}: {exc}", "fit", source=path) from None
    return out


def cmd_fit(run: Run):
    cfg = run.cfg
    fc = cfg.fit
    if fc.data is None:
        raise ConfigError("the fit subcommand needs fit.data (a CSV file)", "fit.data")
    path = (cfg.base_dir / fc.data) if not Path(fc.data).is_absolute() else Path(fc.data)
    if not path.exists():
        raise ConfigError(f"data file {str(path)!r} not found", "fit.data")
    (x, xu), (y, yu), (sigma, _) = _read_columns(path, (fc.x_column, fc.y_column,
                                                         fc.sigma_column))
    res = fit(fc.model, x, y, sigma)
    run.text("fit_report.txt", res.report())
    names, values, cis = zip(*res.rows())
    run.table("fit_parameters.csv", [Column("parameter", "", names), Column("value", "", values),
                                     Column("ci95", "", cis)], (("model", fc.model),))
    model = get_model(fc.model)
    order = np.argsort(x, kind="stable")
    curve = model.func(x[order], res.parameters)
    run.table("fit_curve.csv", [Column(fc.x_column, xu, x[order]), Column(fc.y_column, yu, y[order]),
                                Column("model", yu, curve)], (("model", fc.model),))
    run.plot("fit.svg", line_plot([("data", x[order], y[order], "points"),
                                   ("model", x[order], curve, "line")],
                                  title=f"{fc.model} fit", xlabel=fc.x_column,
                                  ylabel=fc.y_column, meta=run.meta))


COMMANDS = {
    "solve-field": cmd_solve_field,
    "stark-sweep": cmd_stark_sweep,
    "ple": cmd_ple,
    "charge-map": cmd_charge_map,
    "step-response": cmd_step_response,
    "telegraph": cmd_telegraph,
    "readout": cmd_readout,
    "fit": cmd_fit,
}


def build_parser():
    p = argparse.ArgumentParser(prog="vvstark", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"vvstark {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path, help="TOML configuration file")
        s.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (repeatable)")
        s.add_argument("--seed", type=int, help="root random seed (overrides output.seed)")
        s.add_argument("--out-dir", type=Path, help="output directory (overrides output.directory)")
        s.add_argument("--format", choices=("csv", "svg", "both"),
                       help="artifact formats (overrides output.formats)")
    return p


def execute(command, cfg: ExperimentConfig, out_dir: Path, formats: str, overrides=()):
    """Run ``command`` and write its artifacts; returns the written paths."""
    run = Run(command, cfg)
    COMMANDS[command](run)
    keep = {"csv": {"csv", "txt"}, "svg": {"svg", "txt"}, "both": {"csv", "svg", "txt"}}[formats]
    chosen = [a for a in run.artifacts if a.kind in keep]
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for a in chosen:
        data = a.text.encode()
        (out_dir / a.name).write_bytes(data)
        written[a.name] = hashlib.sha256(data).hexdigest()
    manifest = {"toolkit": "vvstark", "version": __version__, "command": command,
                "config_hash": cfg.hash, "seed": cfg.output.seed, "overrides": list(overrides),
                "formats": formats, "files": written, "config": cfg.canonical()}
    path = out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return [out_dir / n for n in written] + [path]


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be >= 0", "--seed")
            cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out_dir if args.out_dir is not None else Path(cfg.output.directory)
    formats = args.format or cfg.output.formats
    try:
        paths = execute(args.command, cfg, out_dir, formats, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure in {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
