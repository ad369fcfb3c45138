"""Recovery of the six inverter controller gains from diagonal impedances.

The d- and q-axis closed forms of the inverter model are matched against
fitted measurements at a handful of frequencies.  Real and imaginary parts
of the mismatch are stacked and solved by a damped Gauss-Newton
(Levenberg-Marquardt) iteration over the logarithms of the gains.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientPoints, NumericalFailure, Singularity
from .freqdata import FrequencyGrid, _fmt, make_log_grid
from .models import (ControllerGains, OperatingPoint, PIController, WECSInverterParams,
                     pll_metrics, z_wecs_dd, z_wecs_qq)
from .rational import RationalTransferFunction, evaluate

N_GAINS = 6
CC, VDC, PLL = slice(0, 2), slice(2, 4), slice(4, 6)
START_PAIRS = ((1e-2, 1e-1), (1e0, 1e2))


@dataclass(frozen=True)
class SolverOptions:
    fd_step: float = 1e-6       # relative forward-difference step (absolute in log-gain)
    damping0: float = 1e-3
    damping_factor: float = 10.0
    step_tol: float = 1e-10
    residual_tol: float = 1e-10
    max_iter: int = 200


@dataclass(frozen=True, eq=False)
class ExtractionProblem:
    z_dd_est: RationalTransferFunction
    z_qq_est: RationalTransferFunction
    params: WECSInverterParams
    op: OperatingPoint
    eval_frequencies: FrequencyGrid
    initial_guess: ControllerGains | None = None
    options: SolverOptions = SolverOptions()
    neglect_delay: bool = False

    def __post_init__(self):
        if 4 * len(self.eval_frequencies) < N_GAINS or len(self.eval_frequencies) < 2:
            raise InsufficientPoints("need at least two frequencies (>= 6 real equations)")

    def measured(self):
        f = self.eval_frequencies.points
        return (np.atleast_1d(evaluate(self.z_dd_est, f)),
                np.atleast_1d(evaluate(self.z_qq_est, f)))


@dataclass(frozen=True)
class ExtractionResult:
    gains: ControllerGains
    residual_norm: float
    iterations: int
    converged: bool
    pll_bandwidth_hz: float
    pll_crossover_hz: float
    pll_phase_margin_deg: float
    frequencies_hz: tuple = ()
    start_index: int = -1


def _channel_residual(model, meas):
    mismatch = (model - meas) / np.abs(meas)
    return np.concatenate([mismatch.real, mismatch.imag])


def residuals(g: ControllerGains, prob: ExtractionProblem, channels: str = "dq") -> np.ndarray:
    """Stacked relative mismatch ``[Re dd, Im dd, Re qq, Im qq]`` over the selection."""
    f = prob.eval_frequencies.points
    z_dd, z_qq = prob.measured()
    parts = []
    if "d" in channels:
        parts.append(_channel_residual(
            np.atleast_1d(z_wecs_dd(prob.params, prob.op, g, f, prob.neglect_delay)), z_dd))
    if "q" in channels:
        parts.append(_channel_residual(
            np.atleast_1d(z_wecs_qq(prob.params, prob.op, g, f, prob.neglect_delay)), z_qq))
    return np.concatenate(parts)


def levenberg_marquardt(fun, x0, opts: SolverOptions = SolverOptions()):
    """Minimise ``|fun(x)|^2``; returns ``(x, |r|, iterations, converged)``.

    Forward-difference Jacobian, multiplicative damping schedule.  Any
    non-finite residual counts as a rejected step.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    if not np.all(np.isfinite(r)):
        raise NumericalFailure("residual is not finite at the starting point")
    cost = float(r @ r)
    lam = opts.damping0
    it = 0
    converged = False
    for it in range(1, opts.max_iter + 1):
        if np.sqrt(cost) < opts.residual_tol:
            converged = True
            break
        jac = np.empty((r.size, x.size))
        for k in range(x.size):
            h = opts.fd_step * max(1.0, abs(x[k]))
            xp = x.copy()
            xp[k] += h
            jac[:, k] = (fun(xp) - r) / h
        if not np.all(np.isfinite(jac)):
            raise NumericalFailure("Jacobian is not finite")
        jtj = jac.T @ jac
        grad = jac.T @ r
        accepted = False
        while lam < 1e16:
            a = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-30))
            try:
                step = -np.linalg.solve(a, grad)
            except np.linalg.LinAlgError:
                lam *= opts.damping_factor
                continue
            x_new = x + step
            r_new = fun(x_new)
            cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new < cost:
                x, r, cost = x_new, r_new, cost_new
                lam = max(lam / opts.damping_factor, 1e-12)
                accepted = True
                break
            lam *= opts.damping_factor
        if not accepted or np.linalg.norm(step) < opts.step_tol * (1 + np.linalg.norm(x)):
            converged = bool(accepted) or np.sqrt(cost) < opts.residual_tol
            break
    return x, float(np.sqrt(cost)), it, converged


def _safe(fun):
    def wrapped(x):
        try:
            with np.errstate(all="ignore"):
                return fun(x)
        except (Singularity, ValueError, OverflowError):
            return np.full(1, np.inf)
    return wrapped


def start_points(initial_guess: ControllerGains | None = None) -> list[np.ndarray]:
    """Eight corner starts (one low/high PI pair per loop), plus the user guess."""
    starts = []
    for idx in range(8):
        v = []
        for loop in range(3):
            v.extend(START_PAIRS[(idx >> loop) & 1])
        starts.append(np.log(np.array(v)))
    if initial_guess is not None:
        starts.append(np.log(np.maximum(initial_guess.as_vector(), 1e-12)))
    return starts


def _solve_from(prob: ExtractionProblem, x0: np.ndarray):
    opts = prob.options
    x = x0.copy()
    iters = 0

    # q-axis only: (cc, pll)
    def r_q(y):
        v = x.copy()
        v[CC], v[PLL] = y[:2], y[2:]
        return residuals(ControllerGains.from_vector(np.exp(v)), prob, "q")
    y, _, n, _ = levenberg_marquardt(_safe(r_q), np.concatenate([x[CC], x[PLL]]), opts)
    x[CC], x[PLL] = y[:2], y[2:]
    iters += n

    # d-axis only: vdc with cc held
    def r_d(y):
        v = x.copy()
        v[VDC] = y
        return residuals(ControllerGains.from_vector(np.exp(v)), prob, "d")
    y, _, n, _ = levenberg_marquardt(_safe(r_d), x[VDC], opts)
    x[VDC] = y
    iters += n

    joint = _safe(lambda v: residuals(ControllerGains.from_vector(np.exp(v)), prob))
    x, norm, n, conv = levenberg_marquardt(joint, x, opts)
    return x, norm, iters + n, conv


def extract_gains(prob: ExtractionProblem, residual_tol: float | None = None) -> ExtractionResult:
    """Multi-start LM; best residual wins, ties go to the smaller gain norm."""
    tol = prob.options.residual_tol if residual_tol is None else residual_tol
    best = None
    for idx, x0 in enumerate(start_points(prob.initial_guess)):
        try:
            x, norm, iters, conv = _solve_from(prob, x0)
        except NumericalFailure:
            continue
        if not np.isfinite(norm):
            continue
        key = (round(norm, 14), float(np.linalg.norm(np.exp(x))))
        if best is None or key < best[0]:
            best = (key, idx, x, norm, iters)
    if best is None:
        raise NumericalFailure("no start produced a finite residual")
    _, idx, x, norm, iters = best
    gains = ControllerGains.from_vector(np.exp(x))
    bw, fc, pm = pll_metrics(gains.pll, prob.op.v_d)
    return ExtractionResult(gains, norm, iters, bool(norm <= tol), bw, fc, pm,
                            tuple(float(f) for f in prob.eval_frequencies.points), idx)


def qq_resonance_hz(z_qq: RationalTransferFunction, f_min: float = 0.5,
                    f_max: float = 100.0, n: int = 2000) -> float:
    """Frequency of the steepest phase transition of ``Z_qq`` (the low-frequency resonance)."""
    f = np.logspace(np.log10(f_min), np.log10(f_max), n)
    phase = np.unwrap(np.angle(np.atleast_1d(evaluate(z_qq, f))))
    slope = np.abs(np.diff(phase) / np.diff(np.log(f)))
    k = int(np.argmax(slope))
    return float(np.sqrt(f[k] * f[k + 1]))


def default_frequencies(z_qq: RationalTransferFunction, n: int = 8,
                        f_low: float = 1.0) -> FrequencyGrid:
    """``n`` log-spaced points from ``f_low`` to ten times the q-axis resonance."""
    return make_log_grid(f_low, 10.0 * qq_resonance_hz(z_qq), n)


def dumps_report(res: ExtractionResult) -> str:
    g = res.gains
    rows = [("kp_cc", g.cc.kp), ("ki_cc", g.cc.ki), ("kp_vdc", g.vdc.kp),
            ("ki_vdc", g.vdc.ki), ("kp_pll", g.pll.kp), ("ki_pll", g.pll.ki),
            ("residual_norm", res.residual_norm), ("iterations", res.iterations),
            ("converged", res.converged), ("pll_bandwidth_hz", res.pll_bandwidth_hz),
            ("pll_crossover_hz", res.pll_crossover_hz),
            ("pll_phase_margin_deg", res.pll_phase_margin_deg),
            ("start_index", res.start_index)]
    buf = io.StringIO()
    for k, v in rows:
        if isinstance(v, bool):
            text = str(v).lower()
        elif isinstance(v, int):
            text = str(v)
        else:
            text = _fmt(v)
        buf.write(f"{k} = {text}\n")
    buf.write("frequencies_hz = " + " ".join(_fmt(f) for f in res.frequencies_hz) + "\n")
    return buf.getvalue()


def result_gains_from_report(text: str) -> ControllerGains:
    vals = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            vals[k] = v
    return ControllerGains(PIController(float(vals["kp_cc"]), float(vals["ki_cc"])),
                           PIController(float(vals["kp_vdc"]), float(vals["ki_vdc"])),
                           PIController(float(vals["kp_pll"]), float(vals["ki_pll"])))
