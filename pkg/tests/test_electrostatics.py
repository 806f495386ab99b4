import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from vvstark.electrostatics import (
    BREAKDOWN_FIELD,
    BandParameters,
    ConvergenceError,
    DeviceGeometry,
    FieldVector,
    GatePatch,
    GridSpec,
    depletion_width,
    field_at,
    four_gate_layout,
    laplace_basis,
    solve_laplace,
    transition_voltage_for_distance,
    uniform_vertical_field,
)

GEO = DeviceGeometry()
PLATE = DeviceGeometry(gates=(GatePatch(-120, 120, -120, 120, -300.0),))
COARSE = GridSpec(128, 64)


def test_uniform_field_default_bias():
    f = uniform_vertical_field(-300.0, GEO)
    assert f.f_parallel == pytest.approx(oracles.FIELD_AT_MINUS_300V, rel=1e-12)
    assert f.perp_magnitude == 0.0


@given(v=st.floats(-1e3, 1e3), t=st.floats(1.0, 500.0), eps=st.floats(1.0, 20.0))
def test_uniform_field_matches_direct_formula(v, t, eps):
    geo = DeviceGeometry(membrane_thickness=t, dielectric_constant=eps)
    if abs(v / (t * eps)) > BREAKDOWN_FIELD:
        return
    assert uniform_vertical_field(v, geo).f_parallel == pytest.approx(
        oracles.uniform_field(v, t, eps), rel=1e-12, abs=1e-300)


@given(v=st.floats(-200, 200), k=st.floats(-5, 5))
def test_uniform_field_is_linear(v, k):
    a = uniform_vertical_field(k * v, GEO).f_parallel
    b = k * uniform_vertical_field(v, GEO).f_parallel
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


def test_uniform_field_rejects_breakdown():
    with pytest.raises(ValueError):
        uniform_vertical_field(1e6, GEO)


def test_depletion_width_spot_values():
    assert depletion_width(0.13, GEO) == pytest.approx(oracles.WD_013V, abs=1e-6)
    assert depletion_width(100.0, GEO) == pytest.approx(oracles.WD_100V, abs=1e-5)
    assert depletion_width(0.0, GEO) == 0.0


@given(phi=st.floats(1e-6, 1e3), k=st.floats(0.01, 100.0))
def test_depletion_width_square_root_law(phi, k):
    assert depletion_width(k * phi, GEO) == pytest.approx(
        math.sqrt(k) * depletion_width(phi, GEO), rel=1e-10)


def test_transition_voltage_spot_values():
    assert transition_voltage_for_distance(10.0, GEO) == pytest.approx(oracles.VT_10UM, rel=1e-6)
    assert transition_voltage_for_distance(5.0, GEO) == pytest.approx(oracles.VT_5UM, rel=1e-6)


@given(r1=st.floats(0.01, 50.0), r2=st.floats(0.01, 50.0))
def test_transition_voltage_monotone(r1, r2):
    if r1 == r2:
        return
    lo, hi = sorted((r1, r2))
    assert transition_voltage_for_distance(lo, GEO) < transition_voltage_for_distance(hi, GEO)


def test_transition_voltage_polarity_flips():
    neg = BandParameters(bias_polarity=-1)
    v_pos = transition_voltage_for_distance(8.0, GEO)
    v_neg = transition_voltage_for_distance(8.0, GEO, neg)
    assert v_neg == pytest.approx(-v_pos, rel=1e-12)


def test_transition_voltage_rejects_negative_distance():
    with pytest.raises(ValueError):
        transition_voltage_for_distance(-1.0, GEO)


def test_gate_patches_must_not_overlap():
    with pytest.raises(ValueError):
        DeviceGeometry(gates=(GatePatch(0, 10, 0, 10), GatePatch(5, 15, 5, 15)))


def test_four_gate_layout_voltages():
    g = four_gate_layout(-10.0, 4.0, 2.0)
    assert [p.voltage for p in g] == [-8.0, -12.0, -9.0, -11.0]


def test_field_vector_rejects_nan():
    with pytest.raises(ValueError):
        FieldVector(float("nan"), 0.0, 0.0)


def test_parallel_plate_matches_uniform_field():
    sol = solve_laplace(PLATE, GridSpec(256, 128))
    expected = uniform_vertical_field(-300.0, PLATE).f_parallel
    for depth in (1.5, 30.0, 60.0, 110.0):
        f = field_at(sol, (0.0, 0.0, depth))
        assert f.f_parallel == pytest.approx(expected, rel=1e-6)
        assert abs(f.f_perp_x) < 1e-9
    assert sol.residual <= 1e-8


def test_cg_and_direct_agree():
    geo = DeviceGeometry(gates=four_gate_layout(-30.0, 10.0, 0.0))
    a = solve_laplace(geo, COARSE, method="direct")
    b = solve_laplace(geo, COARSE, method="cg")
    np.testing.assert_allclose(a.potential, b.potential, atol=1e-5)


def test_maximum_principle():
    geo = DeviceGeometry(gates=four_gate_layout(-20.0, 30.0, 0.0), back_plane_voltage=5.0)
    sol = solve_laplace(geo, COARSE)
    bounds = [g.voltage for g in geo.gates if g.y_min <= 0 <= g.y_max] + [5.0]
    assert sol.potential.min() >= min(bounds) - 1e-9
    assert sol.potential.max() <= max(bounds) + 1e-9


def test_superposition():
    g1 = DeviceGeometry(gates=four_gate_layout(0.0, 40.0, 0.0))
    g2 = DeviceGeometry(gates=four_gate_layout(-25.0, 0.0, 0.0))
    g12 = DeviceGeometry(gates=four_gate_layout(-25.0, 40.0, 0.0))
    s1, s2, s12 = (solve_laplace(g, COARSE) for g in (g1, g2, g12))
    np.testing.assert_allclose(s1.potential + s2.potential, s12.potential, atol=1e-6)


def test_basis_reproduces_direct_solve():
    geo = DeviceGeometry(gates=four_gate_layout(-25.0, 40.0, 0.0), back_plane_voltage=3.0)
    basis = laplace_basis(geo, COARSE)
    direct = solve_laplace(geo, COARSE)
    for p in [(0, 0, 1.5), (20, 0, 10), (-70, 0, 5)]:
        a = basis.field_at(p, [g.voltage for g in geo.gates], 3.0)
        b = field_at(direct, p)
        assert a.f_parallel == pytest.approx(b.f_parallel, rel=1e-6, abs=1e-10)
        assert a.f_perp_x == pytest.approx(b.f_perp_x, rel=1e-6, abs=1e-10)


def test_differential_bias_is_antisymmetric():
    plus = solve_laplace(DeviceGeometry(gates=four_gate_layout(0.0, 20.0, 0.0)), COARSE)
    minus = solve_laplace(DeviceGeometry(gates=four_gate_layout(0.0, -20.0, 0.0)), COARSE)
    for p in [(0, 0, 1.5), (10, 0, 8)]:
        assert field_at(plus, p).f_perp_x == pytest.approx(-field_at(minus, p).f_perp_x, rel=1e-8)
    # pure differential bias leaves the centre with no vertical field
    assert abs(field_at(plus, (0, 0, 5)).f_parallel) < 1e-9


def test_grid_refinement_converges():
    geo = DeviceGeometry(gates=four_gate_layout(-50.0, 20.0, 0.0))
    a = solve_laplace(geo, GridSpec(256, 128))
    b = solve_laplace(geo, GridSpec(256, 128).refined(2))
    for p in [(0, 0, 10), (20, 0, 5), (60, 0, 5)]:
        fa, fb = field_at(a, p), field_at(b, p)
        assert fa.magnitude == pytest.approx(fb.magnitude, rel=0.02)


def test_3d_solve_runs_and_respects_symmetry():
    geo = DeviceGeometry(gates=four_gate_layout(-20.0, 0.0, 0.0))
    sol = solve_laplace(geo, GridSpec(48, 24, 48))
    f = field_at(sol, (0.0, 0.0, 10.0))
    assert abs(f.f_perp_x) < 1e-6 and abs(f.f_perp_y) < 1e-6
    assert f.f_parallel < 0


def test_unresolved_gate_raises():
    geo = DeviceGeometry(gates=(GatePatch(0.0, 1.0, -10, 10, 1.0),))
    with pytest.raises(ValueError, match="resolve"):
        solve_laplace(geo, GridSpec(64, 32))


def test_nonconvergence_raises():
    geo = DeviceGeometry(gates=four_gate_layout(-20.0, 0.0, 0.0))
    with pytest.raises(ConvergenceError):
        solve_laplace(geo, COARSE, method="cg", max_iter=2)


def test_field_at_outside_domain():
    sol = solve_laplace(PLATE, COARSE)
    with pytest.raises(ValueError):
        field_at(sol, (0.0, 0.0, 500.0))


def test_solution_is_read_only():
    sol = solve_laplace(PLATE, COARSE)
    with pytest.raises(ValueError):
        sol.potential[0, 0] = 1.0
