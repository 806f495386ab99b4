import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vvstark.electrostatics import DeviceGeometry, GatePatch
from vvstark.kinetics import RateModel, TelegraphTrace, make_rng, simulate_telegraph
from vvstark.photons import (
    PhotonHistogram,
    ReadoutStack,
    em_fit_poisson_mixture,
    generate_counts,
    optimal_threshold,
    population_vs_voltage,
)
from vvstark.stark import DefectConfig


def constant_trace(bright, duration=8e6):
    return TelegraphTrace(np.array([0.0]), np.array([bright]), duration, 0)


def mixture_sample(p, lam_d, lam_b, n, seed):
    rng = make_rng(seed)
    bright = rng.random(n) < p
    return PhotonHistogram.from_counts(rng.poisson(np.where(bright, lam_b, lam_d)))


def test_histogram_validation():
    with pytest.raises(ValueError):
        PhotonHistogram(np.array([0, 1]), np.array([1.0, -1.0]))
    h = PhotonHistogram.from_mapping({3: 2, 0: 5})
    assert h.values.tolist() == [0, 3] and h.total == 7


def test_all_dark_zero_background_gives_zero_counts():
    h, series = generate_counts(constant_trace(False), 0.625, 0.0, 8.0, seed=1)
    assert h.counts == {0: 1000.0}
    assert not series.counts.any()


def test_all_bright_mean():
    h, _ = generate_counts(constant_trace(True), 0.625, 0.0125, 8.0, seed=2)
    n = h.total
    assert abs(h.mean - 5.0) <= 3 * math.sqrt(5.0 / n)


def test_expected_counts_conserved():
    tr = simulate_telegraph(RateModel(), 1e-3, 6.0, 8e6, seed=3)
    _, s = generate_counts(tr, 0.625, 0.0125, 8.0, seed=4)
    t_b = tr.occupancy() * tr.duration / 1000.0
    t_d = tr.duration / 1000.0 - t_b
    assert s.expected.sum() == pytest.approx(0.625 * t_b + 0.0125 * t_d, rel=1e-12)


def test_slow_and_fast_telegraph_shapes():
    # slow switching: bimodal; fast switching: unimodal near the averaged rate
    slow = simulate_telegraph(RateModel(), 1e-5, 6.0, 2.4e7, seed=5)
    fast = simulate_telegraph(RateModel(), 1.0, 6.0, 2.4e7, seed=5)
    hs, _ = generate_counts(slow, 0.625, 0.0125, 8.0, seed=6)
    hf, _ = generate_counts(fast, 0.625, 0.0125, 8.0, seed=6)
    fs = em_fit_poisson_mixture(hs)
    ff = em_fit_poisson_mixture(hf)
    assert not fs.single_component and 0.2 < fs.p_bright < 0.8
    assert ff.single_component
    assert ff.lambda_bright == pytest.approx(0.5 * (5.0 + 0.1), abs=0.15)


@pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
def test_em_recovers_mixture_fraction(p):
    h = mixture_sample(p, 0.1, 5.0, 10_000, seed=int(10 * p))
    f = em_fit_poisson_mixture(h)
    assert f.converged
    assert abs(f.p_bright - p) <= 0.02
    assert f.lambda_bright > f.lambda_dark >= 0


def test_em_log_likelihood_never_decreases():
    f = em_fit_poisson_mixture(mixture_sample(0.3, 0.5, 4.0, 3000, seed=8))
    assert np.all(np.diff(f.ll_history) >= -1e-9 * abs(f.ll_history[-1]))


def test_single_poisson_collapses_to_bright():
    h = PhotonHistogram.from_counts(make_rng(9).poisson(5.0, 10_000))
    f = em_fit_poisson_mixture(h)
    assert f.p_bright == pytest.approx(1.0, abs=0.01)
    assert f.lambda_bright == pytest.approx(5.0, abs=0.1)


@settings(max_examples=20)
@given(k=st.integers(2, 50))
def test_p_bright_invariant_under_scaling(k):
    h = mixture_sample(0.4, 0.1, 5.0, 2000, seed=10)
    a = em_fit_poisson_mixture(h).p_bright
    b = em_fit_poisson_mixture(h.scaled(k)).p_bright
    assert a == pytest.approx(b, abs=1e-6)


def test_degenerate_histogram_raises():
    with pytest.raises(ValueError, match="degenerate"):
        em_fit_poisson_mixture(PhotonHistogram.from_mapping({3: 500}))


def test_low_data_warning():
    h = mixture_sample(0.5, 0.1, 5.0, 50, seed=11)
    with pytest.warns(UserWarning, match="100"):
        f = em_fit_poisson_mixture(h)
    assert f.low_data


def test_fit_report_mentions_parameters():
    f = em_fit_poisson_mixture(mixture_sample(0.5, 0.1, 5.0, 1000, seed=12))
    text = f.report()
    assert "p_bright" in text and "converged" in text


def test_threshold_example():
    r = optimal_threshold(0.1, 5.0)
    assert r.threshold == oracles.THRESHOLD_01_5
    assert r.fidelity == pytest.approx(oracles.FIDELITY_01_5, abs=1e-12)
    assert r.fidelity == pytest.approx(1 - 0.5 * (r.p_dark_above + r.p_bright_below), abs=1e-15)


def test_threshold_zero_background():
    r = optimal_threshold(0.0, 5.0)
    assert r.threshold == 1 and r.p_dark_above == 0.0


def test_threshold_rejects_equal_means():
    with pytest.raises(ValueError):
        optimal_threshold(2.0, 2.0)


@given(ld=st.floats(0.0, 5.0), gap=st.floats(0.05, 20.0))
def test_threshold_matches_brute_force(ld, gap):
    lb = ld + gap
    r = optimal_threshold(ld, lb)
    _, f = oracles.brute_force_threshold(ld, lb, top=int(lb + 10 * math.sqrt(lb)) + 3)
    assert abs(r.fidelity - f) <= 1e-12
    assert 0.5 <= r.fidelity <= 1.0


def test_fidelity_monotone_in_separation():
    fid = [optimal_threshold(0.1, lb).fidelity for lb in np.linspace(0.2, 20, 200)]
    assert np.all(np.diff(fid) >= -1e-12)


SMALL = ReadoutStack(geometry=DeviceGeometry(gates=(GatePatch(-50, 50, -50, 50),)), n_bins=1500)
DEFECT = DefectConfig(position=(0.0, 0.0, 5.0))


def test_population_curve_limits_and_crossing():
    v_t = oracles.VT_5UM
    volts = np.array([v_t - 4, v_t - 3, v_t - 1, v_t, v_t + 1, v_t + 3, v_t + 4])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        curve = population_vs_voltage(DEFECT, volts, SMALL)
    assert curve.v_threshold == pytest.approx(v_t, rel=1e-6)
    assert curve.p_bright[0] >= 0.99 and curve.p_bright[1] >= 0.99
    assert curve.p_bright[-1] <= 0.01 and curve.p_bright[-2] <= 0.01
    assert abs(curve.crossing() - v_t) <= 1.0


def test_population_curve_is_seeded():
    a = population_vs_voltage(DEFECT, [4.0, 7.0], SMALL)
    b = population_vs_voltage(DEFECT, [4.0, 7.0], SMALL)
    np.testing.assert_array_equal(a.p_bright, b.p_bright)
    with pytest.raises(ValueError):
        population_vs_voltage(DEFECT, [], SMALL)
