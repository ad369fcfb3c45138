import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dqstab.errors import BaseMismatch, ClosureViolation, GridMismatch, PassesThroughMinusOne
from dqstab.freqdata import SYSTEM_BASE, WECS_BASE, FrequencyResponseSet, make_log_grid
from dqstab.gnc import (MinorLoopGain, assess_stability, count_encirclements,
                        critical_frequencies, default_analysis_grid, dumps_loci_csv, eigen_loci,
                        half_contour_turns, minor_loop_gain, minor_loop_gain_from_arrays,
                        qq_mitigation_check)
from dqstab.plant import (PLL_RETUNED, VAC_RETUNED, hvdc_response, reference_plant,
                          wind_farm_response)

W = 2 * np.pi
cplx = st.complex_numbers(min_magnitude=1e-6, max_magnitude=1e3, allow_nan=False,
                          allow_infinity=False)


def diag_set(grid, a, b):
    z = np.zeros((len(grid), 2, 2), dtype=complex)
    z[:, 0, 0], z[:, 1, 1] = a, b
    return z


# ------------------------------------------------------- minor-loop gain

def test_equal_impedances_give_identity():
    g = make_log_grid(1, 100, 30)
    rng = np.random.default_rng(0)
    z = rng.normal(size=(30, 2, 2)) + 1j * rng.normal(size=(30, 2, 2)) + 3 * np.eye(2)
    a = FrequencyResponseSet(SYSTEM_BASE, g, z)
    assert np.allclose(minor_loop_gain(a, a).matrices, np.eye(2), atol=1e-12)


def test_diagonal_ratio():
    g = make_log_grid(1, 100, 10)
    h = diag_set(g, 1 + 1j * g.points, 2.0)
    w = diag_set(g, 4.0, 1j * g.points)
    m = minor_loop_gain_from_arrays(g, h, w).matrices
    assert np.allclose(m[:, 0, 0], (1 + 1j * g.points) / 4, rtol=1e-15)
    assert np.allclose(m[:, 1, 1], 2 / (1j * g.points), rtol=1e-15)
    assert np.all(m[:, 0, 1] == 0) and np.all(m[:, 1, 0] == 0)


def test_grid_and_base_mismatch():
    g1, g2 = make_log_grid(1, 10, 5), make_log_grid(1, 11, 5)
    one = np.tile(np.eye(2), (5, 1, 1))
    with pytest.raises(GridMismatch):
        minor_loop_gain(FrequencyResponseSet(SYSTEM_BASE, g1, one), FrequencyResponseSet(SYSTEM_BASE, g2, one))
    with pytest.raises(BaseMismatch):
        minor_loop_gain(FrequencyResponseSet(SYSTEM_BASE, g1, one), FrequencyResponseSet(WECS_BASE, g1, one))


# ------------------------------------------------------------ eigen-loci

@settings(max_examples=100, deadline=None)
@given(arrays(complex, (8, 2, 2), elements=cplx))
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_trace_and_determinant(m):
    loci = eigen_loci(MinorLoopGain(make_log_grid(1, 10, 8), m))
    tr = m[:, 0, 0] + m[:, 1, 1]
    det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
    scale = np.maximum(np.max(np.abs(m), axis=(1, 2)), 1e-300)
    assert np.all(np.abs(loci.lambda1 + loci.lambda2 - tr) <= 1e-12 * scale)
    assert np.all(np.abs(loci.lambda1 * loci.lambda2 - det) <= 1e-12 * scale**2)


def test_diagonal_loci_are_the_entries():
    g = make_log_grid(1, 100, 200)
    a, b = 0.5 / (1 + 1j * g.points), 2.0 + 0.1j * g.points
    loci = eigen_loci(MinorLoopGain(g, diag_set(g, a, b)))
    pairs = {(tuple(np.round(loci.lambda1, 12)), tuple(np.round(loci.lambda2, 12)))}
    assert pairs <= {(tuple(np.round(a, 12)), tuple(np.round(b, 12))),
                     (tuple(np.round(b, 12)), tuple(np.round(a, 12)))}


def test_reversed_grid_reverses_loci():
    pl = reference_plant()
    g = make_log_grid(0.1, 5000, 400)
    m = minor_loop_gain(hvdc_response(pl, g), wind_farm_response(pl, g)).matrices
    fwd = eigen_loci(MinorLoopGain(g, m))
    bwd = eigen_loci(MinorLoopGain(g, m[::-1]))
    r1, r2 = bwd.lambda1[::-1], bwd.lambda2[::-1]
    same = np.allclose(r1, fwd.lambda1, rtol=1e-12) and np.allclose(r2, fwd.lambda2, rtol=1e-12)
    swapped = np.allclose(r1, fwd.lambda2, rtol=1e-12) and np.allclose(r2, fwd.lambda1, rtol=1e-12)
    assert same or swapped


def test_collision_warns():
    g = make_log_grid(1, 10, 4)
    with pytest.warns(RuntimeWarning):
        loci = eigen_loci(MinorLoopGain(g, np.tile(np.eye(2), (4, 1, 1))))
    assert loci.collisions == (0, 1, 2, 3)


# ----------------------------------------------------------- encirclements

def loop_locus(k, n=4000):
    """Starts and ends at 0.5; ``k`` signed turns around -1 at radius 3 in between."""
    t = np.linspace(0, 1, n)
    radius = 1.5 + 1.5 * np.sin(np.pi * t)
    return -1 + radius * np.exp(2j * np.pi * k * t)


def test_constant_locus_zero():
    assert count_encirclements(np.zeros(50)) == 0


@pytest.mark.parametrize("k", [-2, -1, 1, 2])
def test_full_loops_count_twice(k):
    # the mirror image adds the same turns again
    assert count_encirclements(loop_locus(k)) == 2 * k


@pytest.mark.parametrize("direction", [1, -1])
def test_circle_over_mirrored_contour(direction):
    # upper half of the radius-3 circle around -1; its mirror is the lower half
    th = np.linspace(0, np.pi, 2001)
    upper = -1 + 3 * np.exp(1j * direction * th)
    assert abs(half_contour_turns(upper) - direction) < 1e-12


def test_closure_violation():
    with pytest.raises(ClosureViolation):
        count_encirclements(np.array([0.1, 1.5, 2.0]))
    with pytest.raises(ClosureViolation):
        count_encirclements(np.array([-1.0 + 1.0j, 0.2, 0.1]))


def test_passes_through_minus_one():
    with pytest.raises(PassesThroughMinusOne):
        count_encirclements(np.array([0.1, -1 + 1e-12j, 0.1]))


def test_critical_frequency_interpolated():
    g = make_log_grid(1, 3, 3)
    lam = np.array([-2 + 1j, -2 - 1j, -2 - 2j])
    assert critical_frequencies(g, lam) == [pytest.approx(g.points[0] + 0.5 * (g.points[1] - g.points[0]))]
    assert critical_frequencies(g, np.array([-0.5 + 1j, -0.5 - 1j, 0.1])) == []


# ------------------------------------------------------ fixture properties

FIXTURES = {"unstable": reference_plant(), "vac_retuned": reference_plant(h_vac=VAC_RETUNED),
            "pll_retuned": reference_plant(pll=PLL_RETUNED)}


def _loci(pl, n):
    g = make_log_grid(0.1, 5000, n)
    return g, eigen_loci(minor_loop_gain(hvdc_response(pl, g), wind_farm_response(pl, g)))


@pytest.mark.parametrize("name", list(FIXTURES))
def test_winding_invariant_under_refinement(name):
    pl = FIXTURES[name]
    counts = []
    for n in (2000, 4000, 8000):
        _, loci = _loci(pl, n)
        counts.append((count_encirclements(loci.lambda1), count_encirclements(loci.lambda2)))
    assert counts[0] == counts[1] == counts[2]


@pytest.mark.parametrize("name", list(FIXTURES))
def test_mirrored_winding_is_integer(name):
    _, loci = _loci(FIXTURES[name], 2000)
    for lam in (loci.lambda1, loci.lambda2):
        c = lam + 1
        turns = half_contour_turns(lam) + (2 * np.angle(c[0]) - 2 * np.angle(c[-1])) / (2 * math.pi)
        assert abs(turns - round(turns)) < 1e-6
        assert round(turns) == count_encirclements(lam)


def test_unstable_fixture_encircles():
    rep = assess_stability(minor_loop_gain(*(f(FIXTURES["unstable"], default_analysis_grid())
                                             for f in (hvdc_response, wind_farm_response))))
    assert not rep.stable and rep.total_encirclements != 0 and rep.critical_frequencies
    assert rep.min_distance_to_minus_one > 0 and "right-half-plane" in rep.margins_note


# -------------------------------------------------- decoupled SISO check

def routh_stable_third_order(k):
    # (s+1)(s+2)(s+3) - k s = s^3 + 6 s^2 + (11 - k) s + 6
    a2, a1, a0 = 6.0, 11.0 - k, 6.0
    return a2 > 0 and a1 > 0 and a0 > 0 and a2 * a1 > a0


@pytest.mark.parametrize("k1, k2", [(2, 3), (2, 14), (12, 3), (15, 25), (9.5, 0.5)])
def test_decoupled_case_matches_scalar_criterion(k1, k2):
    g = make_log_grid(1e-4, 1e3, 6000)
    s = W * 1j * g.points
    base = s / ((s + 1) * (s + 2) * (s + 3))
    mlg = minor_loop_gain_from_arrays(g, diag_set(g, -k1 * base, -k2 * base), diag_set(g, 1, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = assess_stability(mlg)
    assert rep.stable == (routh_stable_third_order(k1) and routh_stable_third_order(k2))
    scalar = [count_encirclements(-k * base) for k in (k1, k2)]
    for k, n in zip((k1, k2), scalar):
        assert n == (0 if routh_stable_third_order(k) else -2)
    assert sorted(scalar) == sorted((rep.encirclements_1, rep.encirclements_2))


# ------------------------------------------------------------ mitigation

def test_mitigation_intersection_and_ratio():
    f = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    rep = qq_mitigation_check(f, f, np.full(5, 5.0), pll_bw_hz=6.0, vac_crossover_hz=60.0)
    assert rep.qq_intersection_hz == pytest.approx(5.0)
    assert rep.intersection_below_pll_bw and rep.ratio == 10.0 and rep.rule_10x_satisfied


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 100), st.floats(1, 2000))
def test_ratio_rule_definition(bw, fc):
    f = np.array([1.0, 2.0])
    rep = qq_mitigation_check(f, [1.0, 1.0], [2.0, 2.0], bw, fc)
    assert rep.qq_intersection_hz is None and not rep.intersection_below_pll_bw
    assert rep.ratio == fc / bw and rep.rule_10x_satisfied == (fc / bw >= 10)


def test_loci_csv_header():
    g = make_log_grid(1, 2, 2)
    text = dumps_loci_csv(eigen_loci(MinorLoopGain(g, diag_set(g, 0.1, 0.2))))
    assert text.splitlines()[0] == "f_hz,re_l1,im_l1,re_l2,im_l2"
