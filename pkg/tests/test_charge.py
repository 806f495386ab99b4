import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vvstark.charge import (
    ChargeLevels,
    ChargeState,
    band_profile,
    fermi_position,
    is_quenched_by_transverse_field,
    steady_charge_state,
    transition_voltages,
)
from vvstark.electrostatics import (
    BandParameters,
    DeviceGeometry,
    FieldVector,
    GatePatch,
    GridSpec,
    depletion_width,
    field_at,
    four_gate_layout,
    solve_laplace,
    transition_voltage_for_distance,
)
from vvstark.stark import DefectConfig

GEO = DeviceGeometry()
PAD = DeviceGeometry(gates=(GatePatch(-50, 50, -50, 50),))
BANDS = BandParameters()
ORDER = [ChargeState.VV_plus, ChargeState.VV_0, ChargeState.VV_minus, ChargeState.VV_2minus]


def test_only_neutral_is_bright():
    assert [s.bright for s in ORDER] == [False, True, False, False]


def test_levels_validation():
    with pytest.raises(ValueError):
        ChargeLevels(level_plus_0=2.2)
    with pytest.raises(ValueError):
        ChargeLevels(level_minus_2minus=3.5)


def test_ties_resolve_to_neutral():
    lv = ChargeLevels()
    assert lv.state_for(lv.level_0_minus) is ChargeState.VV_0
    assert lv.state_for(lv.level_plus_0) is ChargeState.VV_0


def test_flat_bands_at_zero_barrier():
    v_flat = -BANDS.built_in_barrier / BANDS.bias_polarity
    prof = band_profile(v_flat, GEO, BANDS, depths=np.linspace(0, 10, 11))
    np.testing.assert_allclose(prof.conduction_band_edge, BANDS.bulk_fermi_depth)


def test_profile_continuous_at_depletion_edge():
    prof = band_profile(10.0, GEO, BANDS)
    w = prof.width
    edge = band_profile(10.0, GEO, BANDS, depths=[w, w * (1 - 1e-9), 1.5 * w])
    assert edge.conduction_band_edge == pytest.approx([BANDS.bulk_fermi_depth] * 3, abs=1e-8)


def test_one_volt_barrier_example():
    v = 1.0 - BANDS.built_in_barrier
    assert depletion_width(1.0, GEO) == pytest.approx(2.06, abs=0.01)
    bands = BandParameters(bulk_fermi_depth=1.5)
    prof = band_profile(v, GEO, bands, depths=[0.0])
    assert bands.bulk_fermi_depth - prof.conduction_band_edge[0] == pytest.approx(1.0, abs=1e-12)


@given(v=st.floats(-50, 50))
def test_profile_monotone_in_depth(v):
    prof = band_profile(v, GEO, BandParameters(bulk_fermi_depth=1.6))
    d = np.diff(prof.conduction_band_edge)
    assert (d >= -1e-12).all() or (d <= 1e-12).all()


def test_neutral_window_matches_depletion_edge():
    # with the bulk Fermi level on the 0/- level the switch is the depletion edge
    for r in (0.5, 2.0, 10.0):
        _, v_minus = transition_voltages(r, GEO, BANDS)
        assert v_minus == pytest.approx(transition_voltage_for_distance(r, GEO, BANDS), rel=1e-12)


def test_transition_at_minus_7p5_with_shifted_work_function():
    # bulk Fermi level 0.083 eV above the 0/- level, defect 5 um from the pad
    bands = BandParameters(bulk_fermi_depth=3.26 - 2.183)
    d = DefectConfig(position=(0.0, 0.0, 5.0))
    _, v_t = transition_voltages(d, PAD, bands)
    shift = ((v_t + 7.5) * bands.bias_polarity)
    bands = BandParameters(bulk_fermi_depth=bands.bulk_fermi_depth,
                           metal_work_function=bands.metal_work_function + shift)
    assert transition_voltages(d, PAD, bands)[1] == pytest.approx(-7.5, abs=1e-9)
    assert steady_charge_state(d, -9.0, PAD, bands) is ChargeState.VV_0
    assert steady_charge_state(d, -6.0, PAD, bands) is ChargeState.VV_minus


def test_centre_defects_survive_minus_300():
    d = DefectConfig(position=(0.0, 0.0, 1.5))
    assert steady_charge_state(d, -300.0, GEO) is ChargeState.VV_0
    d3 = DefectConfig(position=(0.0, 0.0, 3.0))
    assert steady_charge_state(d3, -300.0, GEO) is ChargeState.VV_0


def test_exact_threshold_is_neutral():
    d = DefectConfig(position=(0.0, 0.0, 5.0))
    _, v_t = transition_voltages(d, PAD)
    assert steady_charge_state(d, v_t, PAD) is ChargeState.VV_0
    # the Fermi shift grows quadratically past the edge
    assert steady_charge_state(d, v_t + 1e-3, PAD) is ChargeState.VV_minus


@given(depth=st.floats(0.2, 30.0), v1=st.floats(-400, 400), v2=st.floats(-400, 400))
def test_state_monotone_in_bias(depth, v1, v2):
    d = DefectConfig(position=(0.0, 0.0, depth))
    lo, hi = sorted((v1, v2))
    s_lo = steady_charge_state(d, lo, PAD)
    s_hi = steady_charge_state(d, hi, PAD)
    assert ORDER.index(s_hi) >= ORDER.index(s_lo)


@given(depth=st.floats(0.2, 30.0))
def test_bright_set_is_one_interval(depth):
    d = DefectConfig(position=(0.0, 0.0, depth))
    v = np.linspace(-400, 400, 801)
    bright = np.array([steady_charge_state(d, x, PAD).bright for x in v])
    edges = np.flatnonzero(np.diff(bright.astype(int)))
    assert len(edges) <= 2
    if len(edges) == 2:
        assert bright[edges[0] + 1]


@given(r_in=st.floats(0.5, 9.0), v=st.floats(25.0, 200.0))
def test_depletion_region_is_dark_under_positive_bias(r_in, v):
    # inside w_d(V) the Fermi level is pushed above the 0/- level; beyond it, bulk VV0
    w = depletion_width(BANDS.barrier(v), GEO)
    inside = DefectConfig(position=(0.0, 0.0, min(r_in, 0.95 * w)))
    outside = DefectConfig(position=(0.0, 0.0, 1.05 * w))
    assert steady_charge_state(inside, v, PAD) is not ChargeState.VV_0
    assert steady_charge_state(outside, v, PAD) is ChargeState.VV_0


def test_bulk_position_with_no_gates():
    geo = DeviceGeometry(gates=())
    assert fermi_position(math.inf, 0.0, geo) == pytest.approx(3.26 - 1.16)
    v_plus, v_minus = transition_voltages(DefectConfig(), geo)
    assert v_plus == -math.inf and v_minus == math.inf


def test_quench_threshold():
    d = DefectConfig()
    assert not is_quenched_by_transverse_field(d, FieldVector())
    assert is_quenched_by_transverse_field(d, FieldVector(0.0, 1.2, 0.0))
    assert is_quenched_by_transverse_field(d, FieldVector(0.0, 0.6, 0.8))


def test_deeper_defect_needs_larger_lateral_voltage():
    sol = solve_laplace(DeviceGeometry(gates=four_gate_layout(0.0, 100.0, 0.0)), GridSpec(256, 128))
    f15 = field_at(sol, (0.0, 0.0, 1.5)).perp_magnitude
    f3 = field_at(sol, (0.0, 0.0, 3.0)).perp_magnitude
    d = DefectConfig()
    # lateral voltage to reach the quench field scales as 1/|F_perp per volt|
    v15, v3 = 100.0 * d.quench_field / f15, 100.0 * d.quench_field / f3
    assert v3 > v15
