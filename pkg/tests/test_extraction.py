import numpy as np
import pytest

from dqstab.errors import InsufficientPoints
from dqstab.extraction import (ExtractionProblem, default_frequencies, dumps_report,
                               extract_gains, levenberg_marquardt, qq_resonance_hz, residuals,
                               result_gains_from_report, start_points)
from dqstab.freqdata import FrequencyGrid, make_log_grid
from dqstab.models import ControllerGains, PIController, pll_metrics, synth_measurement
from dqstab.plant import PLL_NOMINAL, wecs_unit_response
from dqstab.rational import fit_auto_order

GRID = make_log_grid(1, 5000, 75)
ZERO_GAINS = ControllerGains(PIController(0, 0), PIController(0, 0), PIController(0, 0))
# crossover ratio for both PLL gains x4, from a 2e6-point brute-force |L| = 1 search
DENSE_CROSSOVER_RATIO_X4 = 3.058369824132125


def fitted(plant, noise=0.0, seed=42):
    clean = wecs_unit_response(plant, GRID)
    rs = synth_measurement(lambda f: clean.z, GRID, noise, seed, base=clean.base)
    dd, _ = fit_auto_order((GRID, rs.channel("dd")))
    qq, _ = fit_auto_order((GRID, rs.channel("qq")))
    return dd, qq


def problem(plant, noise=0.0, freqs=None, **kw):
    dd, qq = fitted(plant, noise)
    freqs = default_frequencies(qq) if freqs is None else freqs
    return ExtractionProblem(dd, qq, plant.wecs, plant.op, freqs, **kw)


@pytest.fixture(scope="module")
def clean_problem(plant_delayed):
    return problem(plant_delayed)


@pytest.fixture(scope="module")
def clean_result(clean_problem):
    return extract_gains(clean_problem)


def max_gain_error(found, truth):
    return float(np.max(np.abs(found.as_vector() / truth.as_vector() - 1)))


# ---------------------------------------------------------- residuals

def test_residual_zero_at_truth(clean_problem, plant_delayed):
    assert np.linalg.norm(residuals(plant_delayed.gains, clean_problem)) < 1e-9


def test_residual_with_zero_gains_is_large_and_finite(clean_problem):
    r = residuals(ZERO_GAINS, clean_problem)
    assert np.all(np.isfinite(r)) and np.linalg.norm(r) > 1.0


@pytest.mark.parametrize("n", [2, 5, 8, 12])
def test_residual_shape(n, plant_delayed, clean_problem):
    prob = ExtractionProblem(clean_problem.z_dd_est, clean_problem.z_qq_est, plant_delayed.wecs,
                             plant_delayed.op, make_log_grid(1, 50, n))
    assert residuals(plant_delayed.gains, prob).shape == (4 * n,)
    assert residuals(plant_delayed.gains, prob, "q").shape == (2 * n,)


def test_one_frequency_is_not_enough(clean_problem, plant_delayed):
    with pytest.raises(InsufficientPoints):
        ExtractionProblem(clean_problem.z_dd_est, clean_problem.z_qq_est, plant_delayed.wecs,
                          plant_delayed.op, FrequencyGrid(np.array([5.0])))


def test_default_selection(clean_problem):
    f = clean_problem.eval_frequencies.points
    res = qq_resonance_hz(clean_problem.z_qq_est)
    assert len(f) == 8 and f[0] == 1.0 and f[-1] == pytest.approx(10 * res)
    assert 3.0 < res < 7.0


# ------------------------------------------------------------- solver

def test_lm_solves_rosenbrock():
    fun = lambda x: np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]])
    x, norm, _, conv = levenberg_marquardt(fun, np.array([-1.2, 1.0]))
    assert conv and norm < 1e-10 and np.allclose(x, 1, atol=1e-8)


def test_eight_deterministic_starts():
    s = start_points()
    assert len(s) == 8 and len({tuple(v) for v in s}) == 8
    assert all(set(np.round(np.exp(v), 12)) <= {1e-2, 1e-1, 1.0, 1e2} for v in s)
    assert len(start_points(ControllerGains.from_vector(np.ones(6)))) == 9


# --------------------------------------------------------- round trips

def test_noiseless_round_trip(clean_result, plant_delayed):
    assert clean_result.converged
    assert max_gain_error(clean_result.gains, plant_delayed.gains) < 0.01


def test_noisy_round_trip(plant_delayed):
    res = extract_gains(problem(plant_delayed, noise=0.01))
    true_bw = pll_metrics(plant_delayed.gains.pll)[0]
    assert max_gain_error(res.gains, plant_delayed.gains) < 0.10
    assert abs(res.pll_bandwidth_hz - true_bw) < 0.5
    assert not res.converged or res.residual_norm <= 1e-10


def test_disjoint_selections_agree(plant_delayed):
    dd, qq = fitted(plant_delayed)
    f = make_log_grid(1, 10 * qq_resonance_hz(qq), 16).points
    a = extract_gains(ExtractionProblem(dd, qq, plant_delayed.wecs, plant_delayed.op,
                                        FrequencyGrid(f[0::2])))
    b = extract_gains(ExtractionProblem(dd, qq, plant_delayed.wecs, plant_delayed.op,
                                        FrequencyGrid(f[1::2])))
    assert max_gain_error(a.gains, b.gains) < 0.02


@pytest.mark.parametrize("tol", [1e-14, 1e-10, 1e-3])
def test_converged_implies_tolerance(tol, clean_problem):
    res = extract_gains(clean_problem, residual_tol=tol)
    assert res.converged == (res.residual_norm <= tol)
    assert np.all(res.gains.as_vector() >= 0)


def test_report_round_trip(clean_result):
    text = dumps_report(clean_result)
    assert result_gains_from_report(text) == clean_result.gains
    assert "pll_bandwidth_hz = " in text and text.count("\n") == 14


# --------------------------------------------------------- PLL metrics

@pytest.mark.parametrize("factor, bw", [(1.1, 8.9), (0.9, 7.9)])
def test_perturbed_gains_shift_bandwidth(factor, bw):
    assert abs(pll_metrics(PLL_NOMINAL.scaled(factor))[0] - bw) < 0.1


def test_crossover_scaling_against_dense_oracle():
    ratio = pll_metrics(PLL_NOMINAL.scaled(4))[1] / pll_metrics(PLL_NOMINAL)[1]
    assert abs(ratio / DENSE_CROSSOVER_RATIO_X4 - 1) < 1e-5


def test_crossover_scaling_integrator_dominated():
    pll = PIController(1e-3 * PLL_NOMINAL.kp, PLL_NOMINAL.ki)
    ratio = pll_metrics(pll.scaled(4))[1] / pll_metrics(pll)[1]
    assert abs(ratio - 2) < 0.01


def test_pll_metrics_rejects_zero_gains():
    with pytest.raises(ValueError):
        pll_metrics(PIController(0, 0))
