"""Stark-shifted |A2> -> |Ex>, |Ey> optical transitions and PLE spectra.

Frequencies are in GHz, fields in MV/m and dipole differences in
GHz/(MV/m).  The excited-state orbital doublet is treated as a 2x2 block:
longitudinal field shifts both branches equally, transverse strain and
transverse field add as in-plane vectors and split the branches by twice
their combined magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .charge import (
    ChargeLevels,
    ChargeState,
    is_quenched_by_transverse_field,
    steady_charge_state,
)
from .electrostatics import (
    BandParameters,
    DeviceGeometry,
    FieldBasis,
    FieldVector,
    GridSpec,
    laplace_basis,
    uniform_vertical_field,
)

ZPL_REFERENCE = 264830.0  # GHz


@dataclass(frozen=True)
class DefectConfig:
    """One c-axis divacancy.

    ``position`` is ``(x, y, depth)`` in um.  ``strain_splitting`` is the
    in-plane strain vector ``(delta_x, delta_y)`` in GHz; the zero-field
    Ex/Ey splitting is twice its length.  ``strain_jitter`` is the standard
    deviation (GHz) of optional per-cooldown Gaussian jitter on that vector.
    """

    position: tuple = (0.0, 0.0, 1.5)
    zpl_center: float = ZPL_REFERENCE
    delta_d_parallel: float = 10.0
    delta_d_perp: float = 10.0
    strain_splitting: tuple = (15.0, 0.0)
    quench_field: float = 1.0
    linewidth: float = 0.05
    strain_jitter: float = 0.0
    name: str = "VV"

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))
        object.__setattr__(self, "strain_splitting",
                           tuple(float(c) for c in self.strain_splitting))
        if len(self.position) != 3 or len(self.strain_splitting) != 2:
            raise ValueError("position needs 3 and strain_splitting 2 components")
        if not self.linewidth > 0:
            raise ValueError("linewidth must be positive")
        if not self.quench_field > 0:
            raise ValueError("quench_field must be positive")
        if not (math.isfinite(self.delta_d_parallel) and math.isfinite(self.delta_d_perp)):
            raise ValueError("dipole parameters must be finite")
        if self.strain_jitter < 0:
            raise ValueError("strain_jitter must be >= 0")

    @property
    def depth(self):
        return self.position[2]


@dataclass(frozen=True)
class TransitionPair:
    """Ex/Ey transition frequencies (GHz); ``None`` when the defect is dark."""

    nu_ex: float | None
    nu_ey: float | None
    bright: bool

    @property
    def splitting(self):
        if not self.bright:
            return None
        return self.nu_ex - self.nu_ey


def _strain(defect, rng):
    dx, dy = defect.strain_splitting
    if defect.strain_jitter > 0 and rng is not None:
        jx, jy = rng.normal(0.0, defect.strain_jitter, size=2)
        dx, dy = dx + jx, dy + jy
    return dx, dy


def branch_frequencies(defect: DefectConfig, field: FieldVector, rng=None):
    """Upper and lower branch frequencies regardless of brightness."""
    dx, dy = _strain(defect, rng)
    common = defect.delta_d_parallel * field.f_parallel
    half = math.hypot(dx + defect.delta_d_perp * field.f_perp_x,
                      dy + defect.delta_d_perp * field.f_perp_y)
    centre = defect.zpl_center + common
    return centre + half, centre - half


def transition_frequencies(defect: DefectConfig, field: FieldVector, rng=None) -> TransitionPair:
    """Exact 2x2 transition frequencies under ``field``.

    Examples
    --------
    >>> p = transition_frequencies(DefectConfig(zpl_center=0.0), FieldVector())
    >>> p.nu_ex, p.nu_ey
    (15.0, -15.0)
    """
    if is_quenched_by_transverse_field(defect, field):
        return TransitionPair(None, None, False)
    ex, ey = branch_frequencies(defect, field, rng)
    return TransitionPair(ex, ey, True)


class LinearizationError(ValueError):
    pass


def linearized_shift(defect: DefectConfig, field: FieldVector):
    """First-order branch shifts ``(d_nu_Ex, d_nu_Ey)`` in GHz.

    The transverse field is projected onto the strain axis, giving
    ``dd_par*F_par +/- dd_perp*F_perp``.  Only valid while the strain
    dominates the field-induced transverse term.

    Raises
    ------
    LinearizationError
        If ``|dd_perp * F_perp| >= 0.2 |delta|``.
    """
    dx, dy = defect.strain_splitting
    strain = math.hypot(dx, dy)
    transverse = abs(defect.delta_d_perp) * field.perp_magnitude
    if transverse == 0.0:
        common = defect.delta_d_parallel * field.f_parallel
        return common, common
    if not transverse < 0.2 * strain:
        raise LinearizationError(
            f"transverse Stark term {transverse:.3g} GHz is not small against the "
            f"strain {strain:.3g} GHz; use transition_frequencies instead")
    projected = (field.f_perp_x * dx + field.f_perp_y * dy) / strain
    common = defect.delta_d_parallel * field.f_parallel
    split = defect.delta_d_perp * projected
    return common + split, common - split


@dataclass(frozen=True)
class LaserScan:
    """Laser detuning grid in GHz, relative to the defect's ``zpl_center``."""

    start: float
    stop: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("scan step must be positive")

    @property
    def offsets(self):
        if self.stop < self.start:
            return np.empty(0)
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return self.start + self.step * np.arange(n)


def lorentzian(nu, center, fwhm):
    """Unit-area Lorentzian."""
    half = fwhm / 2
    return (half / math.pi) / ((nu - center) ** 2 + half**2)


@dataclass(frozen=True, eq=False)
class PLESpectrum:
    frequency_offset: np.ndarray  # GHz from zpl_center
    intensity: np.ndarray
    zpl_center: float
    transitions: TransitionPair


def ple_spectrum(defect: DefectConfig, field: FieldVector, scan: LaserScan,
                 *, bright=True, rng=None) -> PLESpectrum:
    """Two unit-area Lorentzians at the Ex and Ey lines.

    ``bright=False`` forces a dark spectrum (e.g. the defect is ionized).
    """
    offsets = scan.offsets
    pair = transition_frequencies(defect, field, rng)
    if not (bright and pair.bright):
        return PLESpectrum(offsets, np.zeros_like(offsets), defect.zpl_center,
                           TransitionPair(None, None, False))
    nu = defect.zpl_center + offsets
    intensity = (lorentzian(nu, pair.nu_ex, defect.linewidth)
                 + lorentzian(nu, pair.nu_ey, defect.linewidth))
    return PLESpectrum(offsets, intensity, defect.zpl_center, pair)


@dataclass(frozen=True)
class GateSetting:
    """Bias setting for the four-gate device (volts).

    ``voltages`` overrides the common/differential form with explicit
    per-gate values in the geometry's gate order.
    """

    v_z: float = 0.0
    v_x: float = 0.0
    v_y: float = 0.0
    voltages: tuple | None = None

    def gate_voltages(self, n_gates):
        if self.voltages is not None:
            if len(self.voltages) != n_gates:
                raise ValueError("explicit voltages must match the gate count")
            return tuple(self.voltages)
        if n_gates == 4:
            return (self.v_z + self.v_x / 2, self.v_z - self.v_x / 2,
                    self.v_z + self.v_y / 2, self.v_z - self.v_y / 2)
        if self.v_x or self.v_y:
            raise ValueError("differential bias needs the four-gate layout")
        return (self.v_z,) * n_gates


@dataclass(frozen=True, eq=False)
class StarkMap:
    settings: tuple
    frequency_offset: np.ndarray
    intensity: np.ndarray  # rows follow settings
    fields: tuple
    states: tuple
    bright: np.ndarray
    transitions: tuple
    zpl_center: float

    def ridge(self):
        """Per-row (nu_Ex, nu_Ey) offsets from zpl_center, NaN for dark rows."""
        out = np.full((len(self.settings), 2), np.nan)
        for i, pair in enumerate(self.transitions):
            if pair.bright:
                out[i] = (pair.nu_ex - self.zpl_center, pair.nu_ey - self.zpl_center)
        return out


def stark_map(defect: DefectConfig, geometry: DeviceGeometry,
              sweep: Sequence[GateSetting], scan: LaserScan, *,
              field_model="uniform", basis: FieldBasis | None = None,
              grid: GridSpec = GridSpec(),
              bands: BandParameters = BandParameters(),
              levels: ChargeLevels = ChargeLevels(), rng=None) -> StarkMap:
    """PLE spectra of ``defect`` along a gate-voltage sweep.

    ``field_model="uniform"`` uses the common-mode bias dropped across the
    membrane; ``"laplace"`` superposes unit-gate Laplace solutions, which are
    computed once (or taken from ``basis``).  Rows where the defect is not
    VV_0 or is quenched by transverse field are dark.
    """
    sweep = list(sweep)
    if not sweep:
        raise ValueError("voltage sweep is empty")
    if field_model == "laplace" and basis is None:
        basis = laplace_basis(geometry, grid)
    elif field_model not in ("uniform", "laplace"):
        raise ValueError(f"unknown field model {field_model!r}")

    n_gates = len(geometry.gates)
    offsets = scan.offsets
    rows, fields, states, bright, pairs = [], [], [], [], []
    for setting in sweep:
        volts = setting.gate_voltages(n_gates) if n_gates else ()
        if field_model == "uniform":
            f = uniform_vertical_field(setting.v_z, geometry)
        else:
            f = basis.field_at(defect.position, volts, geometry.back_plane_voltage)
        gate, _ = geometry.nearest_gate(defect.position)
        v_near = volts[geometry.gates.index(gate)] if gate is not None else 0.0
        state = steady_charge_state(defect, v_near, geometry, bands, levels)
        spec = ple_spectrum(defect, f, scan, bright=state is ChargeState.VV_0, rng=rng)
        rows.append(spec.intensity)
        fields.append(f)
        states.append(state)
        bright.append(spec.transitions.bright)
        pairs.append(spec.transitions)
    intensity = np.vstack(rows) if offsets.size else np.zeros((len(sweep), 0))
    return StarkMap(tuple(sweep), offsets, intensity, tuple(fields), tuple(states),
                    np.array(bright), tuple(pairs), defect.zpl_center)
