"""Experiment configuration: TOML files with units, validated on load.

Quantities may be bare numbers in the canonical unit of their kind or
strings such as ``"120 um"`` or ``"-300 V"``.  Canonical units are V, um,
GHz, MV/m, mW/um^2, us (kinetics), ms (photon bins), eV and cm^-3.
Unknown keys are rejected and every error carries the offending key and,
where it can be located, the line in the file.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import re
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np
import tomli

from .charge import ChargeLevels
from .electrostatics import (
    BandParameters,
    DeviceGeometry,
    GatePatch,
    GridSpec,
    four_gate_layout,
)
from .fitting import MODELS
from .kinetics import RateModel
from .stark import DefectConfig, GateSetting, LaserScan


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path, ``line`` 1-based or None."""

    def __init__(self, message, key=None, line=None, source=None):
        self.key = key
        self.line = line
        self.source = source
        where = []
        if source is not None:
            where.append(str(source) + (f":{line}" if line else ""))
        if key:
            where.append(f"key '{key}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


UNITS = {
    "voltage": {"V": 1.0, "mV": 1e-3, "kV": 1e3},
    "length": {"um": 1.0, "μm": 1.0, "nm": 1e-3, "mm": 1e3, "m": 1e6},
    "frequency": {"GHz": 1.0, "MHz": 1e-3, "THz": 1e3},
    "field": {"MV/m": 1.0, "V/um": 1.0, "kV/cm": 0.1, "V/m": 1e-6},
    "dipole": {"GHz/(MV/m)": 1.0, "GHz/(V/um)": 1.0, "MHz/(V/m)": 1.0},
    "power": {"mW/um^2": 1.0, "uW/um^2": 1e-3, "W/um^2": 1e3},
    "time_us": {"us": 1.0, "ns": 1e-3, "ms": 1e3, "s": 1e6},
    "time_ms": {"ms": 1.0, "us": 1e-3, "s": 1e3},
    "energy": {"eV": 1.0, "meV": 1e-3},
    "density": {"cm^-3": 1.0, "m^-3": 1e-6},
    "count_rate": {"1/ms": 1.0, "counts/ms": 1.0, "kHz": 1.0, "1/s": 1e-3, "counts/s": 1e-3},
    "rate_slope": {"1/us/(mW/um^2)": 1.0},
    "voltage_slope": {"us*mW/um^2/V": 1.0},
    "delay_scale": {"us*mW/um^2": 1.0},
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S.*?)?\s*$")


def parse_quantity(value, kind, key="?"):
    """Convert ``value`` (number or ``"<number> <unit>"``) to the canonical unit."""
    if isinstance(value, bool):
        raise ConfigError(f"expected a {kind} quantity, got a boolean", key)
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        m = _QUANTITY.match(value)
        if not m:
            raise ConfigError(f"cannot parse {value!r} as a {kind} quantity", key)
        number, unit = float(m.group(1)), m.group(2)
        if unit is None:
            out = number
        else:
            table = UNITS.get(kind, {})
            if unit not in table:
                allowed = ", ".join(table) or "none (dimensionless)"
                raise ConfigError(f"unit {unit!r} is not a {kind} unit (allowed: {allowed})", key)
            out = number * table[unit]
    else:
        raise ConfigError(f"expected a {kind} quantity, got {type(value).__name__}", key)
    if not math.isfinite(out):
        raise ConfigError("value must be finite", key)
    return out


# ---------------------------------------------------------------------------
# sections


@dataclass(frozen=True)
class StarkSweep:
    v_z: tuple = tuple(np.linspace(0.0, -300.0, 31))
    v_x: tuple = (0.0,)
    v_y: tuple = (0.0,)
    field_model: str = "uniform"

    def settings(self):
        return [GateSetting(z, x, y) for z, x, y in itertools.product(self.v_z, self.v_x, self.v_y)]


@dataclass(frozen=True)
class ChargeMapConfig:
    distances: tuple = tuple(np.round(np.linspace(0.5, 20.0, 40), 6))
    voltages: tuple = tuple(np.linspace(-10.0, 100.0, 111))


@dataclass(frozen=True)
class StepConfig:
    powers: tuple = (1.0, 2.5, 5.0, 15.0)
    bin: float = 0.05  # us
    n_cycles: int = 10_000
    v_high: tuple = (6.0, 8.0, 10.0, 12.0)


@dataclass(frozen=True)
class TelegraphConfig:
    power: float = 1e-5  # mW/um^2
    v_gate: float = 6.0  # V
    duration: float = 6e7  # us


@dataclass(frozen=True)
class ReadoutConfig:
    voltages: tuple = tuple(np.linspace(0.0, 12.0, 25))


@dataclass(frozen=True)
class SweepConfig:
    stark: StarkSweep = StarkSweep()
    scan: LaserScan = LaserScan(-20.0, 20.0, 0.02)
    grid: GridSpec = GridSpec()
    field_bias: GateSetting = GateSetting(-300.0, 0.0, 0.0)
    charge: ChargeMapConfig = ChargeMapConfig()
    step: StepConfig = StepConfig()
    telegraph: TelegraphConfig = TelegraphConfig()
    readout: ReadoutConfig = ReadoutConfig()


@dataclass(frozen=True)
class PhotonConfig:
    lambda_bright: float = 0.625  # counts/ms
    lambda_dark: float = 0.0125  # counts/ms
    bin_duration: float = 8.0  # ms
    n_bins: int = 2000
    readout_power: float = 1e-5  # mW/um^2


@dataclass(frozen=True)
class FitConfig:
    model: str = "exp_decay"
    data: str | None = None
    x_column: str = "x"
    y_column: str = "y"
    sigma_column: str | None = None


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: str = "csv"
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    device: DeviceGeometry = DeviceGeometry()
    bands: BandParameters = BandParameters()
    levels: ChargeLevels = ChargeLevels()
    defects: tuple = (DefectConfig(),)
    kinetics: RateModel = RateModel()
    photon: PhotonConfig = PhotonConfig()
    sweep: SweepConfig = SweepConfig()
    fit: FitConfig = FitConfig()
    output: OutputConfig = OutputConfig()
    base_dir: Path = field(default=Path("."), compare=False)

    def canonical(self):
        """Plain, unit-resolved representation used for hashing and manifests."""
        return _plain({f.name: getattr(self, f.name) for f in fields(self) if f.name != "base_dir"})

    @property
    def hash(self):
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_seed(self, seed):
        return replace(self, output=replace(self.output, seed=int(seed)))


def _plain(obj):
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, float)):
        return float(repr(float(obj)))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# schema: key -> kind.  Kinds other than unit kinds: "number", "int", "str",
# plus list forms "list:<kind>" and "sweep:<kind>" (list or range table).

DEVICE = {"membrane_thickness": "length", "dielectric_constant": "number",
          "donor_density": "density", "back_plane_voltage": "voltage",
          "lateral_extent": "length"}
GATES = {"layout": "str", "inner": "length", "outer": "length", "half_width": "length",
         "patches": "patches"}
PATCH = {"x_min": "length", "x_max": "length", "y_min": "length", "y_max": "length",
         "voltage": "voltage"}
BANDS = {"electron_affinity": "energy", "metal_work_function": "energy", "band_gap": "energy",
         "bulk_fermi_depth": "energy", "bias_polarity": "int"}
LEVELS = {"level_plus_0": "energy", "level_0_minus": "energy",
          "level_minus_2minus": "energy", "band_gap": "energy"}
DEFECT = {"name": "str", "position": "list:length", "zpl_center": "frequency",
          "delta_d_parallel": "dipole", "delta_d_perp": "dipole",
          "strain_splitting": "list:frequency", "quench_field": "field",
          "linewidth": "frequency", "strain_jitter": "frequency"}
KINETICS = {"slope_0_minus": "rate_slope", "slope_minus_0": "rate_slope",
            "delay_alpha": "delay_scale", "delay_beta": "voltage_slope",
            "v_low": "voltage", "v_high": "voltage", "switch_width": "voltage"}
PHOTON = {"lambda_bright": "count_rate", "lambda_dark": "count_rate",
          "bin_duration": "time_ms", "n_bins": "int", "readout_power": "power"}
SWEEP = {"v_z": "sweep:voltage", "v_x": "sweep:voltage", "v_y": "sweep:voltage",
         "field_model": "str", "scan": "table", "grid": "table", "field_bias": "table",
         "charge": "table", "step": "table", "telegraph": "table", "readout": "table"}
SCAN = {"start": "frequency", "stop": "frequency", "step": "frequency"}
GRID = {"nx": "int", "nz": "int", "ny": "int"}
BIAS = {"v_z": "voltage", "v_x": "voltage", "v_y": "voltage"}
CHARGE = {"distances": "sweep:length", "voltages": "sweep:voltage"}
STEP = {"powers": "sweep:power", "bin": "time_us", "n_cycles": "int", "v_high": "sweep:voltage"}
TELEGRAPH = {"power": "power", "v_gate": "voltage", "duration": "time_us"}
READOUT = {"voltages": "sweep:voltage"}
FIT = {"model": "str", "data": "str", "x_column": "str", "y_column": "str",
       "sigma_column": "str"}
OUTPUT = {"directory": "str", "formats": "str", "seed": "int"}
TOP = {"device": "table", "defects": "defects", "kinetics": "table", "photon": "table",
       "sweep": "table", "fit": "table", "output": "table"}


class _Reader:
    def __init__(self, text, source, overridden=()):
        self.text = text or ""
        self.source = source
        self.overridden = [tuple(str(q) for q in o) for o in overridden]

    def error(self, message, path):
        key = ".".join(str(p) for p in path)
        sp = tuple(str(p) for p in path)
        for o in self.overridden:
            n = min(len(o), len(sp))
            if n and o[:n] == sp[:n]:
                return ConfigError(message, key, None, "--set")
        return ConfigError(message, key, _find_line(self.text, path), self.source)

    def value(self, raw, kind, path):
        key = ".".join(str(p) for p in path)
        try:
            if kind in UNITS or kind == "number":
                return parse_quantity(raw, kind if kind in UNITS else "dimensionless", key)
            if kind == "int":
                if isinstance(raw, bool) or not isinstance(raw, (int, float)) or raw != int(raw):
                    raise ConfigError("expected an integer", key)
                return int(raw)
            if kind == "str":
                if not isinstance(raw, str):
                    raise ConfigError("expected a string", key)
                return raw
            if kind.startswith("list:"):
                if not isinstance(raw, list):
                    raise ConfigError("expected a list", key)
                return tuple(parse_quantity(v, kind[5:], key) for v in raw)
            if kind.startswith("sweep:"):
                return self.sweep(raw, kind[6:], key)
        except ConfigError as exc:
            raise self.error(exc.args[0].split(": ", 1)[-1], path) from None
        raise AssertionError(kind)

    def sweep(self, raw, kind, key):
        if isinstance(raw, list):
            vals = tuple(parse_quantity(v, kind, key) for v in raw)
        elif isinstance(raw, dict):
            extra = set(raw) - {"start", "stop", "num"}
            if extra or not {"start", "stop", "num"} <= set(raw):
                raise ConfigError("a range table needs exactly start, stop and num", key)
            num = raw["num"]
            if isinstance(num, bool) or not isinstance(num, int) or num < 0:
                raise ConfigError("num must be a non-negative integer", key)
            a = parse_quantity(raw["start"], kind, key)
            b = parse_quantity(raw["stop"], kind, key)
            vals = tuple(float(v) for v in np.linspace(a, b, num))
        else:
            vals = (parse_quantity(raw, kind, key),)
        if not vals:
            raise ConfigError("sweep list is empty", key)
        return vals

    def table(self, raw, schema, path, target=None, required=()):
        if not isinstance(raw, dict):
            raise self.error("expected a table", path)
        for k in raw:
            if k not in schema:
                raise self.error(f"unknown key (allowed: {', '.join(sorted(schema))})",
                                 path + (k,))
        for k in required:
            if k not in raw:
                raise self.error("required key is missing", path + (k,))
        out = {}
        for k, kind in schema.items():
            if k in raw and kind not in ("table", "patches", "defects"):
                out[k] = self.value(raw[k], kind, path + (k,))
        if target is None:
            return out
        return self.build(target, out, path)

    def build(self, cls, kwargs, path):
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise self.error(str(exc), path) from None


def _find_line(text, path):
    """Best-effort line of the deepest locatable prefix of ``path``."""
    header = ()
    counts = {}
    best, best_len = None, 0
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("[["):
            name = tuple(s.strip("[] ").split("."))
            counts[name] = counts.get(name, -1) + 1
            header = name + (counts[name],)
            full = header
        elif s.startswith("["):
            header = tuple(s.strip("[] ").split("."))
            full = header
        elif "=" in s:
            full = header + tuple(p.strip().strip('"') for p in s.split("=", 1)[0].split("."))
        else:
            continue
        str_path = tuple(str(p) for p in path)
        str_full = tuple(str(p) for p in full)
        n = 0
        while n < min(len(str_full), len(str_path)) and str_full[n] == str_path[n]:
            n += 1
        if n == len(str_full) and n > best_len:
            best, best_len = lineno, n
    return best


def _gates(reader, raw, path):
    g = reader.table(raw, GATES, path)
    layout = g.pop("layout", "four_gate")
    if layout == "four_gate":
        if "patches" in raw:
            raise reader.error("patches only apply to layout = 'custom'", path + ("patches",))
        return four_gate_layout(**g)
    if layout == "custom":
        if g:
            raise reader.error("inner/outer/half_width only apply to layout = 'four_gate'", path)
        patches = raw.get("patches")
        if not isinstance(patches, list) or not patches:
            raise reader.error("custom layout needs a non-empty patches list", path + ("patches",))
        return tuple(reader.table(p, PATCH, path + ("patches", i), GatePatch, required=tuple(PATCH)[:4])
                     for i, p in enumerate(patches))
    raise reader.error("layout must be 'four_gate' or 'custom'", path + ("layout",))


def _device(reader, raw, path):
    schema = dict(DEVICE, gates="table", bands="table", levels="table")
    kw = reader.table(raw, schema, path)
    gates = _gates(reader, raw.get("gates", {}), path + ("gates",))
    geometry = reader.build(DeviceGeometry, dict(kw, gates=gates), path)
    bands = reader.table(raw.get("bands", {}), BANDS, path + ("bands",), BandParameters)
    if bands.bias_polarity not in (1, -1):
        raise reader.error("bias_polarity must be +1 or -1", path + ("bands", "bias_polarity"))
    levels = reader.table(raw.get("levels", {}), LEVELS, path + ("levels",), ChargeLevels)
    return geometry, bands, levels


def _sweep(reader, raw, path):
    kw = reader.table(raw, SWEEP, path)
    model = kw.pop("field_model", "uniform")
    if model not in ("uniform", "laplace"):
        raise reader.error("field_model must be 'uniform' or 'laplace'", path + ("field_model",))
    stark = reader.build(StarkSweep, dict(kw, field_model=model), path)

    def sub(name, schema, cls, required=()):
        if name not in raw:
            return getattr(SweepConfig(), name)
        return reader.table(raw[name], schema, path + (name,), cls, required)

    scan = sub("scan", SCAN, LaserScan, required=("start", "stop", "step"))
    if scan.offsets.size == 0:
        raise reader.error("laser scan is empty (stop < start)", path + ("scan",))
    grid = sub("grid", GRID, GridSpec)
    bias = sub("field_bias", BIAS, GateSetting)
    charge = sub("charge", CHARGE, ChargeMapConfig)
    step = sub("step", STEP, StepConfig)
    if step.bin <= 0 or step.n_cycles < 1 or min(step.powers) <= 0:
        raise reader.error("step needs bin > 0, n_cycles >= 1 and positive powers",
                           path + ("step",))
    tele = sub("telegraph", TELEGRAPH, TelegraphConfig)
    if tele.power <= 0 or tele.duration <= 0:
        raise reader.error("telegraph power and duration must be positive", path + ("telegraph",))
    readout = sub("readout", READOUT, ReadoutConfig)
    return SweepConfig(stark, scan, grid, bias, charge, step, tele, readout)


def _defects(reader, raw, path):
    if not isinstance(raw, list) or not raw:
        raise reader.error("at least one [[defects]] entry is required", path)
    out = []
    for i, d in enumerate(raw):
        out.append(reader.table(d, DEFECT, path + (i,), DefectConfig))
    names = [d.name for d in out]
    if len(set(names)) != len(names):
        raise reader.error("defect names must be unique", path)
    return tuple(out)


def config_from_dict(raw, *, text=None, source=None, base_dir=Path("."),
                     overridden=()) -> ExperimentConfig:
    """Validate a parsed TOML mapping into an :class:`ExperimentConfig`."""
    reader = _Reader(text, source, overridden)
    reader.table(raw, TOP, (), required=("device", "defects"))
    geometry, bands, levels = _device(reader, raw["device"], ("device",))
    defects = _defects(reader, raw["defects"], ("defects",))
    kinetics = reader.table(raw.get("kinetics", {}), KINETICS, ("kinetics",), RateModel)
    photon = reader.table(raw.get("photon", {}), PHOTON, ("photon",), PhotonConfig)
    if not (photon.lambda_bright > photon.lambda_dark >= 0):
        raise reader.error("need lambda_bright > lambda_dark >= 0", ("photon",))
    if photon.bin_duration <= 0 or photon.n_bins < 1 or photon.readout_power <= 0:
        raise reader.error("bin_duration, n_bins and readout_power must be positive", ("photon",))
    sweep = _sweep(reader, raw.get("sweep", {}), ("sweep",))
    fit = reader.table(raw.get("fit", {}), FIT, ("fit",), FitConfig)
    if fit.model not in MODELS:
        raise reader.error(f"unknown model (allowed: {', '.join(MODELS)})", ("fit", "model"))
    output = reader.table(raw.get("output", {}), OUTPUT, ("output",), OutputConfig)
    if output.formats not in ("csv", "svg", "both"):
        raise reader.error("formats must be csv, svg or both", ("output", "formats"))
    if output.seed < 0:
        raise reader.error("seed must be >= 0", ("output", "seed"))
    return ExperimentConfig(geometry, bands, levels, defects, kinetics, photon, sweep, fit,
                            output, Path(base_dir))


def parse_override(item):
    """Split ``"a.b.c=value"`` into a key path and a TOML-parsed value."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, text = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        value = text.strip()
    path = tuple(int(p) if p.isdigit() else p for p in key.split("."))
    return path, value


def apply_overrides(raw, overrides):
    for item in overrides:
        path, value = parse_override(item)
        node = raw
        for i, p in enumerate(path[:-1]):
            key = ".".join(str(q) for q in path[: i + 1])
            if isinstance(p, int):
                if not isinstance(node, list) or p >= len(node):
                    raise ConfigError("index out of range in --set", key, source="--set")
                node = node[p]
            else:
                if not isinstance(node, dict):
                    raise ConfigError("cannot descend into a non-table in --set", key, source="--set")
                node = node.setdefault(p, {})
        last = path[-1]
        if isinstance(last, int):
            if not isinstance(node, list) or last >= len(node):
                raise ConfigError("index out of range in --set", ".".join(map(str, path)),
                                  source="--set")
        elif not isinstance(node, dict):
            raise ConfigError("cannot set a key on a non-table", ".".join(map(str, path)),
                              source="--set")
        node[last] = value
    return raw


def load_config(path, overrides=()) -> ExperimentConfig:
    """Read, override and validate a TOML configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=path) from None
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}", source=path) from None
    apply_overrides(raw, overrides)
    overridden = [parse_override(o)[0] for o in overrides]
    return config_from_dict(raw, text=text, source=path, base_dir=path.parent,
                            overridden=overridden)
