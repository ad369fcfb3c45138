"""Rational transfer functions fitted to complex frequency-response samples.

The fit is a Sanathanan-Koerner iteration: the nonlinear problem
``min |Z - N/D|`` is replaced by a sequence of weighted linear problems
``min |w (Z D - N)|`` with ``w = weight / |D_prev|``.  Real and imaginary
parts of each frequency equation are stacked as separate real rows so that
the coefficients come out real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditioned, InsufficientPoints, InvariantViolation, ParseError, PoleOnAxis
from .freqdata import FrequencyGrid

POLE_GUARD = 1e-300
MAX_SK_ITER = 30
SK_TOL = 1e-10
COND_GUARD = 1e15


@dataclass(frozen=True, eq=False)
class RationalTransferFunction:
    """``N(s)/D(s)`` with real coefficients in descending powers of s (rad/s).

    The denominator is stored monic (leading coefficient 1).
    """

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        num = np.atleast_1d(np.asarray(self.num, dtype=float))
        den = np.atleast_1d(np.asarray(self.den, dtype=float))
        if num.size == 0 or den.size == 0:
            raise InvariantViolation("empty coefficient list")
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den))):
            raise InvariantViolation("coefficients must be finite")
        if den[0] == 0:
            raise InvariantViolation("leading denominator coefficient is zero")
        if not np.any(num != 0):
            raise InvariantViolation("numerator is identically zero")
        lead = den[0]
        num, den = num / lead, den / lead
        num.setflags(write=False)
        den.setflags(write=False)
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @property
    def m(self) -> int:
        return self.num.size - 1

    @property
    def n(self) -> int:
        return self.den.size - 1

    def __call__(self, f):
        return evaluate(self, f)

    def __eq__(self, other):
        return (isinstance(other, RationalTransferFunction)
                and np.array_equal(self.num, other.num) and np.array_equal(self.den, other.den))

    def eval_s(self, s):
        """Evaluate at complex ``s`` without the singularity guard."""
        return np.polyval(self.num, s) / np.polyval(self.den, s)

    def poles(self) -> np.ndarray:
        return np.roots(self.den) if self.n else np.array([], dtype=complex)

    def zeros(self) -> np.ndarray:
        return np.roots(np.trim_zeros(self.num, "f")) if self.m else np.array([], dtype=complex)


def evaluate(tf: RationalTransferFunction, f):
    """Evaluate ``tf`` at ``s = j 2 pi f``; scalar in, scalar out."""
    f_arr = np.asarray(f, dtype=float)
    if np.any(f_arr <= 0):
        raise ValueError("frequency must be > 0")
    s = 2j * np.pi * f_arr
    d = np.polyval(tf.den, s)
    if np.any(np.abs(d) < POLE_GUARD):
        raise PoleOnAxis(f"denominator vanishes at f = {f}")
    out = np.polyval(tf.num, s) / d
    return complex(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class FitReport:
    max_rel_error: float
    errors: np.ndarray
    iterations: int
    converged: bool
    m: int = 0
    n: int = 0
    history: tuple = field(default=())  # (n, max_rel_error) per tried order, auto-order only


def max_relative_error(tf: RationalTransferFunction, samples) -> float:
    return float(np.max(relative_errors(tf, samples)))


def relative_errors(tf: RationalTransferFunction, samples) -> np.ndarray:
    grid, z = _unpack(samples)
    fit = np.atleast_1d(evaluate(tf, grid.points))
    diff = np.abs(fit - z)
    mag = np.abs(z)
    return np.where(mag > 0, diff / np.where(mag > 0, mag, 1.0), diff)


def _unpack(samples):
    grid, z = samples
    if not isinstance(grid, FrequencyGrid):
        grid = FrequencyGrid(grid)
    z = np.asarray(z, dtype=complex).ravel()
    if z.size != len(grid):
        raise ValueError(f"{z.size} samples for {len(grid)} frequencies")
    return grid, z


def _weights(z: np.ndarray, weighting: str) -> np.ndarray:
    if weighting == "relative":
        mag = np.abs(z)
        return 1.0 / np.where(mag > 0, mag, 1.0)
    if weighting == "uniform":
        return np.ones(z.size)
    raise ValueError(f"unknown weighting scheme {weighting!r}")


def fit_fixed_order(samples, m: int, n: int, weighting: str = "relative"):
    """Fit numerator order ``m`` over monic denominator order ``n``.

    ``samples`` is ``(FrequencyGrid, complex values)``.  Returns
    ``(RationalTransferFunction, FitReport)``.
    """
    grid, z = _unpack(samples)
    if m < 0 or n < 0:
        raise ValueError("orders must be non-negative")
    if m > n + 1:
        raise ValueError(f"numerator order {m} exceeds denominator order {n} + 1")
    if len(grid) < m + n + 1:
        raise InsufficientPoints(f"{len(grid)} points cannot determine {m + n + 1} coefficients")

    w0 = _weights(z, weighting)
    # Normalised frequency keeps the powers near unity before column scaling.
    w_scale = float(np.exp(np.mean(np.log(grid.omega))))
    sn = 1j * grid.omega / w_scale
    num_pows = sn[:, None] ** np.arange(m, -1, -1)  # descending
    den_pows = sn[:, None] ** np.arange(n, -1, -1)

    a = np.zeros(n + 1)
    a[0] = 1.0
    coeffs_prev = None
    iterations = 0
    converged = False
    for iterations in range(1, MAX_SK_ITER + 1):
        d_prev = den_pows @ a
        w = w0 / np.abs(d_prev)
        # unknowns: b_m..b_0, a_{n-1}..a_0 ; rhs moves the monic term across
        cplx = np.hstack([-num_pows, z[:, None] * den_pows[:, 1:]]) * w[:, None]
        rhs = -(z * den_pows[:, 0]) * w
        design = np.vstack([cplx.real, cplx.imag])
        target = np.concatenate([rhs.real, rhs.imag])
        col = np.max(np.abs(design), axis=0)
        col[col == 0] = 1.0
        scaled = design / col
        sv = np.linalg.svd(scaled, compute_uv=False)
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        if not np.isfinite(cond) or cond > COND_GUARD:
            raise IllConditioned(f"design matrix condition {cond:.3g} exceeds {COND_GUARD:g}")
        sol, *_ = np.linalg.lstsq(scaled, target, rcond=None)
        # one step of iterative refinement recovers the last bits on exact data
        sol = sol + np.linalg.lstsq(scaled, target - scaled @ sol, rcond=None)[0]
        sol = sol / col
        b = sol[: m + 1]
        a = np.concatenate([[1.0], sol[m + 1:]])
        coeffs = np.concatenate([b, a])
        if coeffs_prev is not None:
            change = np.linalg.norm(coeffs - coeffs_prev) / max(np.linalg.norm(coeffs), 1e-300)
            if change < SK_TOL:
                converged = True
                break
        coeffs_prev = coeffs
        if n == 0:
            converged = True
            break

    # undo the frequency normalisation: c_k (s/ws)^k -> (c_k / ws^k) s^k
    b_phys = b / w_scale ** np.arange(m, -1, -1)
    a_phys = a / w_scale ** np.arange(n, -1, -1)
    tf = RationalTransferFunction(b_phys, a_phys)
    errs = relative_errors(tf, (grid, z))
    report = FitReport(float(np.max(errs)), errs, iterations, converged, m, n)
    return tf, report


def fit_auto_order(samples, err_target: float = 1e-3, max_order: int = 8,
                   weighting: str = "relative"):
    """Lowest denominator order ``n`` (numerator ``n + 1``) meeting ``err_target``.

    If no order reaches the target the best fit found is returned with
    ``converged=False``.
    """
    if not err_target > 0:
        raise ValueError("err_target must be > 0")
    grid, z = _unpack(samples)
    best = None
    history = []
    for n in range(1, max_order + 1):
        m = n + 1
        if len(grid) < m + n + 1:
            break
        try:
            tf, rep = fit_fixed_order((grid, z), m, n, weighting)
        except IllConditioned:
            history.append((n, math.inf))
            continue
        history.append((n, rep.max_rel_error))
        if best is None or rep.max_rel_error < best[1].max_rel_error:
            best = (tf, rep)
        if rep.max_rel_error <= err_target:
            return tf, _with(rep, converged=True, history=tuple(history))
    if best is None:
        raise InsufficientPoints("no order could be fitted")
    tf, rep = best
    return tf, _with(rep, converged=False, history=tuple(history))


def _with(rep: FitReport, **changes) -> FitReport:
    values = dict(rep.__dict__)
    values.update(changes)
    return FitReport(**values)


def dumps_coeffs(tf: RationalTransferFunction) -> str:
    lines = ["num"] + [repr(float(c)) for c in tf.num] + ["den"] + [repr(float(c)) for c in tf.den]
    return "\n".join(lines) + "\n"


def loads_coeffs(text: str) -> RationalTransferFunction:
    section = None
    num, den = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line in ("num", "den"):
            section = line
            continue
        if section is None:
            raise ParseError(f"line {lineno}: coefficient before 'num'/'den' marker")
        try:
            value = float(line)
        except ValueError:
            raise ParseError(f"line {lineno}: not a number: {line!r}") from None
        if not math.isfinite(value):
            raise ParseError(f"line {lineno}: non-finite coefficient")
        (num if section == "num" else den).append(value)
    if not num or not den:
        raise ParseError("coefficient file needs non-empty 'num' and 'den' sections")
    try:
        return RationalTransferFunction(num, den)
    except InvariantViolation as exc:
        raise ParseError(str(exc)) from None
