import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dqstab.errors import InsufficientPoints, InvariantViolation, ParseError, PoleOnAxis
from dqstab.freqdata import make_log_grid
from dqstab.models import synth_measurement
from dqstab.rational import (RationalTransferFunction, dumps_coeffs, evaluate, fit_auto_order,
                             fit_fixed_order, loads_coeffs, max_relative_error, relative_errors)

GRID = make_log_grid(1, 5000, 75)
W = 2 * np.pi


def known_5_4():
    """Lightly damped poles and zeros spread over the measurement band."""
    zeros = [-W * 2, -W * 60 * (0.3 + 1j), -W * 60 * (0.3 - 1j), -W * 900, -W * 3500]
    poles = [-W * 5 * (0.2 + 1j), -W * 5 * (0.2 - 1j), -W * 250, -W * 1500]
    return RationalTransferFunction(0.7 * np.real(np.poly(zeros)), np.real(np.poly(poles)))


def samples(tf, grid=GRID):
    return grid, np.asarray(evaluate(tf, grid.points))


# ------------------------------------------------------------ evaluate

def test_first_order_value():
    tf = RationalTransferFunction([1.0], [1.0, 1.0])
    assert abs(evaluate(tf, 1 / (2 * np.pi)) - (0.5 - 0.5j)) < 1e-15


def test_differentiator_value():
    tf = RationalTransferFunction([1.0, 0.0], [1.0])
    assert abs(evaluate(tf, 1.0) - 2j * np.pi) < 1e-15


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e4))
def test_pole_zero_cancellation(f):
    a = RationalTransferFunction([1.0, 2.0], [1.0, 3.0, 2.0])
    b = RationalTransferFunction([1.0], [1.0, 1.0])
    assert abs(evaluate(a, f) - evaluate(b, f)) <= 1e-12 * abs(evaluate(b, f))


def test_pole_on_axis():
    tf = RationalTransferFunction([1.0], [1.0, 0.0, (2 * np.pi) ** 2])
    with pytest.raises(PoleOnAxis):
        evaluate(tf, 1.0)


@pytest.mark.parametrize("num, den", [([0.0], [1.0]), ([1.0], [0.0, 1.0]), ([np.nan], [1.0]),
                                      ([], [1.0])])
def test_tf_invariants(num, den):
    with pytest.raises(InvariantViolation):
        RationalTransferFunction(num, den)


def test_denominator_is_monic():
    tf = RationalTransferFunction([2.0], [4.0, 8.0])
    assert tf.den[0] == 1 and np.allclose(tf.num, [0.5]) and np.allclose(tf.den, [1, 2])


# ---------------------------------------------------------- fixed order

def test_recovers_known_5_4():
    tf, rep = fit_fixed_order(samples(known_5_4()), 5, 4)
    assert rep.max_rel_error < 1e-6
    f = make_log_grid(1.3, 4000, 333).points
    truth = evaluate(known_5_4(), f)
    assert np.max(np.abs(evaluate(tf, f) - truth) / np.abs(truth)) < 1e-6


def test_constant_fit_is_exact():
    tf, rep = fit_fixed_order((GRID, np.full(75, 2.0)), 0, 0)
    assert tf.num.tolist() == [2.0] and tf.den.tolist() == [1.0]
    assert rep.max_rel_error == 0.0


def test_too_few_points():
    with pytest.raises(InsufficientPoints):
        fit_fixed_order((make_log_grid(1, 10, 3), np.ones(3)), 2, 2)


def test_numerator_order_cap():
    with pytest.raises(ValueError):
        fit_fixed_order(samples(known_5_4()), 6, 4)


def test_report_matches_independent_error():
    tf, rep = fit_fixed_order(samples(known_5_4()), 3, 2)
    assert abs(rep.max_rel_error - max_relative_error(tf, samples(known_5_4()))) <= 1e-15
    assert rep.max_rel_error == np.max(rep.errors) and np.all(rep.errors >= 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-4, 1e4), st.booleans())
def test_fit_scale_equivariant(k, negative):
    k = -k if negative else k
    g, z = samples(known_5_4())
    base, _ = fit_fixed_order((g, z), 3, 2)
    scaled, _ = fit_fixed_order((g, k * z), 3, 2)
    f = GRID.points
    assert np.max(np.abs(evaluate(scaled, f) - k * evaluate(base, f))
                  / np.abs(k * evaluate(base, f))) < 1e-9


# ----------------------------------------------------------- auto order

def test_auto_order_minimal_on_first_order():
    tf, rep = fit_auto_order(samples(RationalTransferFunction([1.0], [1.0, 1.0])))
    assert rep.n == 1 and rep.converged


def test_auto_order_on_known_system():
    tf, rep = fit_auto_order(samples(known_5_4()), 1e-6)
    assert rep.converged and rep.n == 4 and rep.m == 5


def test_auto_order_noisy_second_order():
    truth = RationalTransferFunction([1.0, W * 40], [1.0, 2 * 0.3 * W * 20, (W * 20) ** 2])
    clean = np.asarray(evaluate(truth, GRID.points))
    rs = synth_measurement(lambda f: np.array([np.diag([z, z]) for z in clean]), GRID, 0.01, 42)
    tf, rep = fit_auto_order((GRID, rs.channel("dd")), 0.05)
    assert rep.converged and rep.max_rel_error <= 0.05


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-6, 1e-1), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_auto_order_contract(target, max_order, seed):
    rng = np.random.default_rng(seed)
    z = np.asarray(evaluate(known_5_4(), GRID.points)) * (1 + 0.02 * rng.standard_normal(75))
    tf, rep = fit_auto_order((GRID, z), target, max_order)
    assert rep.n <= max_order
    assert not (rep.converged and rep.max_rel_error > target)


def test_auto_order_shortfall_flags_best():
    tf, rep = fit_auto_order(samples(known_5_4()), 1e-9, max_order=2)
    assert not rep.converged and rep.n <= 2
    assert rep.max_rel_error == min(e for _, e in rep.history)


def test_auto_order_rejects_nonpositive_target():
    with pytest.raises(ValueError):
        fit_auto_order(samples(known_5_4()), 0.0)


# ------------------------------------------------------- error metrics

def test_self_fit_error_zero():
    tf = known_5_4()
    assert max_relative_error(tf, samples(tf)) < 1e-12


def test_uniform_scaling_error():
    tf = known_5_4()
    g, z = samples(tf)
    assert abs(max_relative_error(tf, (g, z * 1.001)) - (1 - 1 / 1.001)) < 1e-12
    assert abs(max_relative_error(RationalTransferFunction(1.001 * tf.num, tf.den), (g, z))
               - 1e-3) < 1e-9


def test_max_semantics_single_corrupted_point():
    tf = known_5_4()
    g, z = samples(tf)
    z = z.copy()
    z[17] *= 1.2
    errs = relative_errors(tf, (g, z))
    assert int(np.argmax(errs)) == 17 and max_relative_error(tf, (g, z)) == errs[17]


def test_zero_sample_uses_absolute_error():
    tf = RationalTransferFunction([1.0], [1.0])
    errs = relative_errors(tf, (make_log_grid(1, 2, 2), np.array([0.0, 1.0])))
    assert errs.tolist() == [1.0, 0.0]


# ------------------------------------------------------------ coeff I/O

def test_coeff_round_trip():
    tf = known_5_4()
    assert loads_coeffs(dumps_coeffs(tf)) == tf


@pytest.mark.parametrize("text", ["", "1.0\n", "num\n1\n", "num\nx\nden\n1\n", "num\n1\nden\ninf\n",
                                  "num\n0\nden\n1\n"])
def test_bad_coeff_files(text):
    with pytest.raises(ParseError):
        loads_coeffs(text)
