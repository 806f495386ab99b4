"""Steady-state charge of a divacancy near a biased Schottky gate.

The gate bends the bands over a region of width ``w_d(|phi|)`` next to the
electrode, with ``phi = phi_bi + s*V``.  Inside that region the Fermi level
moves relative to the bands by ``phi * (1 - r/w_d)**2`` (eV), upward for
``phi > 0``.  The defect charge follows from where the local Fermi level sits
with respect to the charge-transition levels.  With the bulk Fermi level
placed on the 0/- level (the default), the bright/dark boundary is exactly
the depletion edge, ``w_d(V) = r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .electrostatics import (
    BandParameters,
    DeviceGeometry,
    FieldVector,
    _depletion_coefficient,
    depletion_width,
)


TIE_TOLERANCE = 1e-12  # eV


class ChargeState(IntEnum):
    VV_plus = 1
    VV_0 = 0
    VV_minus = -1
    VV_2minus = -2

    @property
    def bright(self):
        return self is ChargeState.VV_0


@dataclass(frozen=True)
class ChargeLevels:
    """Charge-transition levels in eV above the valence-band maximum.

    Fermi positions within ``TIE_TOLERANCE`` of a level count as sitting on
    it, so round-off at an exact threshold still resolves toward VV_0.
    """

    level_plus_0: float = 1.1
    level_0_minus: float = 2.1
    level_minus_2minus: float = 2.6
    band_gap: float = 3.26

    def __post_init__(self):
        levels = (self.level_plus_0, self.level_0_minus, self.level_minus_2minus)
        if not (0 < levels[0] < levels[1] < levels[2] < self.band_gap):
            raise ValueError(f"levels must increase strictly inside (0, {self.band_gap}) eV")

    def state_for(self, fermi_position) -> ChargeState:
        """Charge state for a Fermi level ``fermi_position`` eV above E_v.

        A Fermi level sitting exactly on a level resolves toward VV_0.
        """
        tol = TIE_TOLERANCE
        if fermi_position < self.level_plus_0 - tol:
            return ChargeState.VV_plus
        if fermi_position <= self.level_0_minus + tol:
            return ChargeState.VV_0
        if fermi_position <= self.level_minus_2minus + tol:
            return ChargeState.VV_minus
        return ChargeState.VV_2minus


@dataclass(frozen=True)
class BandProfile:
    depth: np.ndarray  # um from the gate
    conduction_band_edge: np.ndarray  # E_c - E_F, eV
    barrier: float  # signed, V
    width: float  # um
    bulk: float  # E_c - E_F far from the gate, eV


def _bending(distance, barrier, coeff):
    """Upward Fermi-level shift (eV) at ``distance`` from the gate."""
    distance = np.asarray(distance, dtype=float)
    reach = np.sqrt(abs(barrier)) - distance / coeff
    return math.copysign(1.0, barrier) * np.where(reach > 0, reach, 0.0) ** 2


def band_profile(v_gate, geometry: DeviceGeometry, bands: BandParameters = BandParameters(),
                 depths=None) -> BandProfile:
    """Conduction-band edge relative to E_F versus distance from a gate.

    Parameters
    ----------
    depths : array_like, optional
        Sample points in um.  Defaults to 201 points spanning twice the
        bending width (or 1 um when the bands are flat).
    """
    phi = bands.barrier(v_gate)
    w = float(depletion_width(phi, geometry))
    if depths is None:
        depths = np.linspace(0.0, 2 * w if w > 0 else 1.0, 201)
    depths = np.asarray(depths, dtype=float)
    ec = bands.bulk_fermi_depth - _bending(depths, phi, _depletion_coefficient(geometry))
    ec = np.clip(ec, 0.0, bands.band_gap)
    return BandProfile(depths, ec, phi, w, bands.bulk_fermi_depth)


def fermi_position(distance, v_gate, geometry: DeviceGeometry,
                   bands: BandParameters = BandParameters()):
    """Fermi level above E_v (eV) at ``distance`` um from a gate biased at ``v_gate``."""
    if math.isinf(distance):
        return bands.band_gap - bands.bulk_fermi_depth
    prof = band_profile(v_gate, geometry, bands, depths=[distance])
    return float(bands.band_gap - prof.conduction_band_edge[0])


def _nearest(defect, geometry, gate_voltages=None):
    gate, distance = geometry.nearest_gate(defect.position)
    if gate is None:
        return 0.0, math.inf
    if gate_voltages is None:
        return gate.voltage, distance
    return gate_voltages[geometry.gates.index(gate)], distance


def steady_charge_state(defect, v_gate, geometry: DeviceGeometry,
                        bands: BandParameters = BandParameters(),
                        levels: ChargeLevels = ChargeLevels()) -> ChargeState:
    """Charge state of ``defect`` with its nearest gate biased at ``v_gate``."""
    _, distance = geometry.nearest_gate(defect.position)
    return levels.state_for(fermi_position(distance, v_gate, geometry, bands))


def _barrier_for_shift(shift, distance, coeff, upward):
    """Barrier at which the Fermi shift at ``distance`` reaches ``shift``."""
    reach = distance / coeff + math.sqrt(abs(shift))
    return reach**2 if upward else -reach**2


def _snap(shift):
    return 0.0 if abs(shift) <= TIE_TOLERANCE else shift


def transition_voltages(defect_or_distance, geometry: DeviceGeometry,
                        bands: BandParameters = BandParameters(),
                        levels: ChargeLevels = ChargeLevels()):
    """Bias bounds ``(v_plus, v_minus)`` of the bright VV_0 window.

    ``v_minus`` is the VV_0 / VV_minus switch and ``v_plus`` the VV_plus /
    VV_0 switch, expressed as gate voltages on the defect's nearest gate.
    With ``s = +1`` the defect is bright for ``v_plus <= V <= v_minus``.
    Infinite values mean the switch is never reached.
    """
    if isinstance(defect_or_distance, (int, float)):
        distance = float(defect_or_distance)
    else:
        _, distance = geometry.nearest_gate(defect_or_distance.position)
    s = bands.bias_polarity
    bulk = bands.band_gap - bands.bulk_fermi_depth
    if math.isinf(distance):
        state = levels.state_for(bulk)
        if state is ChargeState.VV_0:
            return (-s * math.inf, s * math.inf)
        return (math.nan, math.nan)
    coeff = _depletion_coefficient(geometry)
    phi_bi = bands.built_in_barrier

    up = _snap(levels.level_0_minus - bulk)
    # clamped Fermi level cannot rise above the conduction band
    if up >= bands.bulk_fermi_depth:
        v_minus = s * math.inf
    else:
        v_minus = (_barrier_for_shift(up, distance, coeff, up >= 0) - phi_bi) / s
    down = _snap(levels.level_plus_0 - bulk)
    if -down > bulk:
        v_plus = -s * math.inf
    else:
        v_plus = (_barrier_for_shift(down, distance, coeff, down > 0) - phi_bi) / s
    return v_plus, v_minus


def is_quenched_by_transverse_field(defect, field: FieldVector) -> bool:
    """True when the in-plane field reaches the defect's quench threshold."""
    return field.perp_magnitude >= defect.quench_field
