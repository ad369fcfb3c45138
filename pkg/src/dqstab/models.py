"""Analytical per-unit dq impedance models of the HVDC rectifier and the WECS inverter.

Conventions
-----------
* ``s`` is the Laplace variable in rad/s.  Controllers (PI gains) act on it
  directly; passive per-unit elements use ``s / omega_base`` so that
  ``l`` and ``c`` are their reactance / susceptance at the base frequency.
* The dq frame rotates at the base frequency, so the speed-voltage coupling
  of an inductor is ``+-l`` and that of a capacitor ``+-c`` (per unit).
* Impedances are "looking into" the converter:
  ``Z = dv / di`` with ``i`` flowing into the device (load convention).  The
  rectifier closed forms are the source-convention expressions, which
  coincide with this for a grid-forming source.
* Every public function takes frequencies in Hz (``f > 0``) and is
  vectorised; scalar in gives scalar out.  The ``*_s`` helpers take the
  Laplace variable directly and accept negative frequencies.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import InvariantViolation, NoCrossing, Singularity
from .freqdata import FrequencyGrid, FrequencyResponseSet, PerUnitBase

GUARD = 1e-12
HALF_POWER_DB = 10 * math.log10(2.0)  # the usual "3 dB"


def _s_of(f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ValueError("frequency must be > 0")
    return 2j * np.pi * f


def _out(x):
    x = np.asarray(x)
    return complex(x) if x.ndim == 0 else x


def _guard(den, what: str):
    if np.any(np.abs(den) < GUARD):
        raise Singularity(f"{what} vanishes (|.| < {GUARD:g})")


@dataclass(frozen=True)
class PIController:
    kp: float
    ki: float

    def __post_init__(self):
        if not (math.isfinite(self.kp) and math.isfinite(self.ki)):
            raise InvariantViolation("PI gains must be finite")
        if self.kp < 0 or self.ki < 0:
            raise InvariantViolation(f"PI gains must be >= 0, got ({self.kp}, {self.ki})")

    def __call__(self, s):
        return self.kp + self.ki / s

    def scaled(self, factor: float) -> "PIController":
        return PIController(self.kp * factor, self.ki * factor)


@dataclass(frozen=True)
class PwmModel:
    """Modulator gain with a transport delay realised as a first-order Pade."""

    gain: float = 1.0
    delay: float = 0.0  # s

    def __post_init__(self):
        if not self.gain > 0 or self.delay < 0:
            raise InvariantViolation("PWM gain must be > 0 and delay >= 0")

    @classmethod
    def from_switching(cls, f_sw_hz: float, gain: float = 1.0) -> "PwmModel":
        return cls(gain, 1.5 / f_sw_hz)

    def __call__(self, s, neglect_delay: bool = False):
        if neglect_delay or self.delay == 0:
            return self.gain + 0 * s
        half = 0.5 * self.delay * s
        return self.gain * (1 - half) / (1 + half)


def series_rl_dq(r: float, l: float, s, omega_base: float) -> np.ndarray:
    """dq impedance matrix of a series R-L branch, shape ``s.shape + (2, 2)``."""
    s = np.asarray(s)
    z = np.empty(s.shape + (2, 2), dtype=complex)
    z[..., 0, 0] = z[..., 1, 1] = r + s * l / omega_base
    z[..., 0, 1] = -l
    z[..., 1, 0] = l
    return z


def shunt_c_dq(c: float, s, omega_base: float) -> np.ndarray:
    """dq admittance matrix of a shunt capacitor."""
    s = np.asarray(s)
    y = np.empty(s.shape + (2, 2), dtype=complex)
    y[..., 0, 0] = y[..., 1, 1] = s * c / omega_base
    y[..., 0, 1] = -c
    y[..., 1, 0] = c
    return y


def _diag2(a, b) -> np.ndarray:
    a, b = np.broadcast_arrays(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))
    m = np.zeros(a.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = a
    m[..., 1, 1] = b
    return m


def _inv2(m: np.ndarray, what: str) -> np.ndarray:
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    scale = np.max(np.abs(m), axis=(-2, -1))
    if np.any(np.abs(det) < GUARD * np.maximum(scale, 1.0) ** 2):
        raise Singularity(f"singular 2x2 matrix in {what}")
    inv = np.empty_like(m)
    inv[..., 0, 0] = m[..., 1, 1]
    inv[..., 1, 1] = m[..., 0, 0]
    inv[..., 0, 1] = -m[..., 0, 1]
    inv[..., 1, 0] = -m[..., 1, 0]
    return inv / det[..., None, None]


# ---------------------------------------------------------------- parameters

@dataclass(frozen=True)
class VSCRectifierParams:
    r_c: float
    l_c: float
    c_f: float
    r_t: float
    l_t: float
    v_dc0: float
    pwm: PwmModel
    h_i: PIController
    h_vac: PIController
    f_base: float = 50.0

    def __post_init__(self):
        _check_passives(self, ("l_c", "c_f", "l_t", "v_dc0", "f_base"), ("r_c", "r_t"))

    @property
    def omega_base(self) -> float:
        return 2 * math.pi * self.f_base


@dataclass(frozen=True)
class WECSInverterParams:
    r_cw: float
    l_cw: float
    c_wf: float
    c_dc: float
    r_tw: float
    l_tw: float
    z_cable: tuple  # (resistance, inductance) in pu
    pwm: PwmModel
    f_base: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "z_cable", tuple(float(v) for v in self.z_cable))
        if len(self.z_cable) != 2 or min(self.z_cable) < 0:
            raise InvariantViolation("z_cable must be (r >= 0, l >= 0)")
        _check_passives(self, ("l_cw", "c_wf", "c_dc", "l_tw", "f_base"), ("r_cw", "r_tw"))

    @property
    def omega_base(self) -> float:
        return 2 * math.pi * self.f_base


def _check_passives(obj, positive, non_negative):
    for name in positive:
        v = getattr(obj, name)
        if not (math.isfinite(v) and v > 0):
            raise InvariantViolation(f"{name} must be > 0, got {v!r}")
    for name in non_negative:
        v = getattr(obj, name)
        if not (math.isfinite(v) and v >= 0):
            raise InvariantViolation(f"{name} must be >= 0, got {v!r}")


@dataclass(frozen=True)
class OperatingPoint:
    v_dc: float
    i_d: float
    v_d: float
    d_d: float
    d_q: float

    def __post_init__(self):
        if not all(math.isfinite(getattr(self, k)) for k in ("v_dc", "i_d", "v_d", "d_d", "d_q")):
            raise InvariantViolation("operating point must be finite")
        if self.v_dc <= 0:
            raise InvariantViolation("v_dc must be > 0")

    @classmethod
    def from_power(cls, p_pu: float, wecs: WECSInverterParams, v_dc: float = 1.0,
                   v_d: float = 1.0) -> "OperatingPoint":
        """Unity power factor at the inverter terminal.

        The converter voltage balances the filter drop
        ``(r_cw + j l_cw) i`` at base frequency; duty ratios are that voltage
        over ``v_dc``.
        """
        i_d = p_pu / v_d
        d_d = (v_d + wecs.r_cw * i_d) / v_dc
        d_q = wecs.l_cw * i_d / v_dc
        return cls(v_dc, i_d, v_d, d_d, d_q)


@dataclass(frozen=True)
class ControllerGains:
    cc: PIController
    vdc: PIController
    pll: PIController

    def as_vector(self) -> np.ndarray:
        return np.array([self.cc.kp, self.cc.ki, self.vdc.kp, self.vdc.ki,
                         self.pll.kp, self.pll.ki])

    @classmethod
    def from_vector(cls, v) -> "ControllerGains":
        v = [float(x) for x in v]
        return cls(PIController(v[0], v[1]), PIController(v[2], v[3]), PIController(v[4], v[5]))

    def scaled(self, factor: float) -> "ControllerGains":
        return ControllerGains(self.cc.scaled(factor), self.vdc.scaled(factor),
                               self.pll.scaled(factor))


@dataclass(frozen=True)
class LoopMargins:
    crossover_hz: float
    phase_margin_deg: float
    multiple_crossings: bool = False


# ------------------------------------------------------- HVDC rectifier (VSC-R)

def g_cc_cl_vscr_s(p: VSCRectifierParams, s):
    """Closed current loop of the rectifier, PWM delay neglected."""
    ol = p.v_dc0 * p.pwm.gain * p.h_i(s) / (p.r_c + s * p.l_c / p.omega_base)
    return ol / (1 + ol)


def z_vscr_diag_s(p: VSCRectifierParams, s, neglect_delay: bool = False):
    h_pwm = p.pwm(s, neglect_delay)
    hi = p.h_i(s)
    num = p.v_dc0 * h_pwm * hi + p.r_c + s * p.l_c / p.omega_base
    den = 1 - h_pwm + p.v_dc0 * h_pwm * hi * p.h_vac(s)
    _guard(den, "rectifier impedance denominator")
    return num / den


def z_vscr_diag(p: VSCRectifierParams, f, neglect_delay: bool = False):
    """Diagonal (dd = qq) impedance of the ac-voltage controlled rectifier."""
    return _out(z_vscr_diag_s(p, _s_of(f), neglect_delay))


def z_vscr_from_current_loop(p: VSCRectifierParams, f):
    """Same quantity as ``1 / (G_cc_cl H_vac)``; valid without PWM delay and unity PWM gain."""
    s = _s_of(f)
    den = g_cc_cl_vscr_s(p, s) * p.h_vac(s)
    _guard(den, "current-loop form denominator")
    return _out(1 / den)


def z_hvdc_diag_s(p: VSCRectifierParams, s, neglect_delay: bool = False):
    z = z_vscr_diag_s(p, s, neglect_delay)
    den = 1 + s * p.c_f / p.omega_base * z
    _guard(den, "rectifier-with-filter denominator")
    return z / den


def z_hvdc_diag(p: VSCRectifierParams, f, neglect_delay: bool = False):
    """Rectifier diagonal impedance including the ac filter capacitor."""
    return _out(z_hvdc_diag_s(p, _s_of(f), neglect_delay))


def g_vac_ol_s(p: VSCRectifierParams, s):
    """Open ac-voltage loop ``H_vac G_cc_cl / (s C_f)``, delay neglected."""
    return p.h_vac(s) * g_cc_cl_vscr_s(p, s) / (s * p.c_f / p.omega_base)


def z_hvdc_from_vac_loop(p: VSCRectifierParams, f):
    s = _s_of(f)
    den = s * p.c_f / p.omega_base * (g_vac_ol_s(p, s) + 1)
    _guard(den, "ac-voltage-loop form denominator")
    return _out(1 / den)


def z_hvdc_full_s(p: VSCRectifierParams, s, neglect_delay: bool = False,
                  coupling: bool = True, converter: bool = True):
    wb = p.omega_base
    y_cf = shunt_c_dq(p.c_f, s, wb)
    z_t = series_rl_dq(p.r_t, p.l_t, s, wb)
    if not coupling:
        y_cf = _diag2(y_cf[..., 0, 0], y_cf[..., 1, 1])
        z_t = _diag2(z_t[..., 0, 0], z_t[..., 1, 1])
    y = y_cf
    if converter:
        zc = z_vscr_diag_s(p, s, neglect_delay)
        _guard(zc, "rectifier impedance")
        y = y + _diag2(1 / zc, 1 / zc)
    return z_t + _inv2(y, "HVDC shunt combination")


def z_hvdc_full(p: VSCRectifierParams, f, neglect_delay: bool = False,
                coupling: bool = True, converter: bool = True):
    """2x2 HVDC impedance at the collection bus: transformer + (rectifier || C_f).

    ``coupling=False`` drops the +-l / +-c speed-voltage terms;
    ``converter=False`` opens the rectifier branch.
    """
    return z_hvdc_full_s(p, _s_of(f), neglect_delay, coupling, converter)


def vac_open_loop(p: VSCRectifierParams, f):
    return _out(g_vac_ol_s(p, _s_of(f)))


def vscr_current_open_loop(p: VSCRectifierParams, f):
    s = _s_of(f)
    return _out(p.v_dc0 * p.pwm.gain * p.h_i(s) / (p.r_c + s * p.l_c / p.omega_base))


# ------------------------------------------------------------ WECS inverter

def pll_loops_s(pll: PIController, v_d: float, s):
    ol = v_d * pll(s) / s
    return ol, ol / (1 + ol)


def pll_loops(pll: PIController, v_d: float, f):
    """PLL ``(open_loop, closed_loop)`` at ``f``; open loop ``v_d (kp + ki/s) / s``."""
    ol, cl = pll_loops_s(pll, v_d, _s_of(f))
    return _out(ol), _out(cl)


def _wecs_common(p: WECSInverterParams, op: OperatingPoint, g: ControllerGains, s,
                 neglect_delay: bool):
    wb = p.omega_base
    z0 = p.r_cw + s * p.l_cw / wb
    h_pwm = p.pwm(s, neglect_delay)
    g_cc = g.cc(s) * op.v_dc * h_pwm / z0
    cs = s * p.c_dc / wb
    return z0, h_pwm, g_cc, cs


def z_wecs_dd_s(p: WECSInverterParams, op: OperatingPoint, g: ControllerGains, s,
                neglect_delay: bool = False):
    z0, h_pwm, g_cc, cs = _wecs_common(p, op, g, s, neglect_delay)
    g_cc_cl = g_cc / (1 + g_cc)
    # dc-voltage loop: error v_dc - v_ref raises the d-current reference
    g_vdc = g.vdc(s) * g_cc_cl / cs
    psi_n = op.d_d * g_vdc * (1 + g_cc) + g_cc
    psi_d = 1 + op.i_d * z0 * g_vdc * (1 + g_cc)
    _guard(psi_d, "psi_d")
    a = op.v_dc - op.d_d * op.i_d / cs
    num = z0 + op.d_d**2 / cs + a * z0 * psi_n / psi_d
    den = 1 - a * h_pwm / psi_d
    _guard(den, "d-axis impedance denominator")
    return num / den


def z_wecs_qq_s(p: WECSInverterParams, op: OperatingPoint, g: ControllerGains, s,
                neglect_delay: bool = False):
    z0, h_pwm, g_cc, cs = _wecs_common(p, op, g, s, neglect_delay)
    _, t_pll = pll_loops_s(g.pll, op.v_d, s)
    g_pll = t_pll / op.v_d  # PLL input normalised by v_d
    psi_pll = g_cc * z0 * op.i_d - op.v_dc * h_pwm * op.v_d + op.v_dc * op.d_d
    num = z0 + op.d_q**2 / cs + g_cc * z0
    den = 1 - op.v_dc * h_pwm - g_pll * psi_pll
    _guard(den, "q-axis impedance denominator")
    return num / den


def z_wecs_dd(p, op, g, f, neglect_delay: bool = False):
    """d-axis impedance of the dc-voltage controlled inverter."""
    return _out(z_wecs_dd_s(p, op, g, _s_of(f), neglect_delay))


def z_wecs_qq(p, op, g, f, neglect_delay: bool = False):
    """q-axis impedance of the inverter; shaped by the PLL at low frequency."""
    return _out(z_wecs_qq_s(p, op, g, _s_of(f), neglect_delay))


def z_wecs_matrix_s(p, op, g, s, neglect_delay: bool = False):
    """Converter-only dq matrix; exact current-loop decoupling leaves it diagonal."""
    return _diag2(z_wecs_dd_s(p, op, g, s, neglect_delay), z_wecs_qq_s(p, op, g, s, neglect_delay))


def aggregate_wind_s(z_wecs: np.ndarray, p: WECSInverterParams, n: int, s,
                     coupling: bool = True) -> np.ndarray:
    if n < 1:
        raise ValueError("number of farms must be >= 1")
    wb = p.omega_base
    z_ser = series_rl_dq(p.r_tw + p.z_cable[0], p.l_tw + p.z_cable[1], s, wb)
    y_cf = shunt_c_dq(p.c_wf, s, wb)
    if not coupling:
        z_ser = _diag2(z_ser[..., 0, 0], z_ser[..., 1, 1])
        y_cf = _diag2(y_cf[..., 0, 0], y_cf[..., 1, 1])
    y = _inv2(np.asarray(z_wecs, dtype=complex), "WECS impedance") + y_cf
    return (z_ser + _inv2(y, "WECS shunt combination")) / n


def aggregate_wind(z_wecs, p: WECSInverterParams, n: int, f, coupling: bool = True):
    """``(1/n) (Z_cable + Z_T + (Z_WECS^-1 + Y_Cf)^-1)`` on the single-unit base."""
    return aggregate_wind_s(z_wecs, p, n, _s_of(f), coupling)


def wecs_current_open_loop(p: WECSInverterParams, op: OperatingPoint, g: ControllerGains, f,
                           neglect_delay: bool = False):
    _, _, g_cc, _ = _wecs_common(p, op, g, _s_of(f), neglect_delay)
    return _out(g_cc)


# ------------------------------------------------------------- loop metrics

def _pairs(freqs, values, func):
    freqs = np.asarray(freqs, dtype=float)
    if func is not None and values is None:
        values = func(freqs)
    values = np.asarray(values, dtype=complex)
    if freqs.shape != values.shape or freqs.size < 2:
        raise ValueError("need matching frequency/value arrays with >= 2 points")
    return freqs, values


def _refine(func, target_db, fa, fb, va, vb):
    """Frequency in [fa, fb] where ``20 log10 |func|`` equals ``target_db``."""
    if func is None:
        x = (target_db - va) / (vb - va)
        return float(np.exp(np.log(fa) + x * (np.log(fb) - np.log(fa))))

    def h(logf):
        return 20 * np.log10(abs(complex(func(np.exp(logf))))) - target_db

    return float(np.exp(brentq(h, np.log(fa), np.log(fb), xtol=1e-14, rtol=1e-13)))


def loop_margins(freqs, open_loop=None, func: Callable | None = None) -> LoopMargins:
    """Gain crossover and phase margin of an open loop sampled on ``freqs``.

    With ``func`` (``f -> L(f)``) the crossover is refined by root bracketing
    between the grid points that straddle ``|L| = 1``; without it the
    refinement interpolates log-magnitude linearly in log-frequency.
    """
    freqs, values = _pairs(freqs, open_loop, func)
    mag_db = 20 * np.log10(np.abs(values))
    sign = np.sign(mag_db)
    idx = np.nonzero(sign[:-1] * sign[1:] <= 0)[0]
    idx = [i for i in idx if not (mag_db[i] == 0 and i > 0 and mag_db[i - 1] == 0)]
    if len(idx) == 0:
        raise NoCrossing("|L| does not cross 1 on the supplied grid")
    i = idx[0]
    if mag_db[i] == 0:
        fc = float(freqs[i])
    else:
        fc = _refine(func, 0.0, freqs[i], freqs[i + 1], mag_db[i], mag_db[i + 1])
    lc = complex(func(fc)) if func is not None else _interp_complex(freqs, values, fc)
    pm = 180.0 + math.degrees(np.angle(lc))
    pm = (pm + 180.0) % 360.0 - 180.0
    if pm == -180.0:
        pm = 180.0
    multiple = len(idx) > 1
    if multiple:
        warnings.warn(f"{len(idx)} gain crossings found; reporting the first", RuntimeWarning)
    return LoopMargins(fc, pm, multiple)


def _interp_complex(freqs, values, f):
    lf = np.log(freqs)
    mag = np.interp(np.log(f), lf, np.log(np.abs(values)))
    ph = np.interp(np.log(f), lf, np.unwrap(np.angle(values)))
    return complex(np.exp(mag) * np.exp(1j * ph))


def closed_loop_bandwidth(freqs, closed_loop=None, func: Callable | None = None) -> float:
    """First frequency where ``|G|`` falls 3 dB (half power) below its low-frequency value.

    With ``func`` the reference level is taken six decades below the grid,
    which is the dc value to rounding for any response that has one.
    """
    freqs, values = _pairs(freqs, closed_loop, func)
    mag_db = 20 * np.log10(np.abs(values))
    ref = mag_db[0] if func is None else 20 * math.log10(abs(complex(func(freqs[0] * 1e-6))))
    target = ref - HALF_POWER_DB
    below = np.nonzero(mag_db <= target)[0]
    if below.size == 0:
        raise NoCrossing("response never drops 3 dB below its low-frequency value")
    j = int(below[0])
    if j == 0:
        raise NoCrossing("response starts below the -3 dB level")
    return _refine(func, target, freqs[j - 1], freqs[j], mag_db[j - 1], mag_db[j])


def pll_metrics(pll: PIController, v_d: float = 1.0, f_min: float = 0.01,
                f_max: float = 1e3, n: int = 4000) -> tuple[float, float, float]:
    """``(closed-loop bandwidth Hz, crossover Hz, phase margin deg)`` of the PLL."""
    if pll.kp == 0 and pll.ki == 0:
        raise ValueError("PLL gains are both zero")
    freqs = np.logspace(math.log10(f_min), math.log10(f_max), n)
    lm = loop_margins(freqs, func=lambda f: pll_loops(pll, v_d, f)[0])
    bw = closed_loop_bandwidth(freqs, func=lambda f: pll_loops(pll, v_d, f)[1])
    return bw, lm.crossover_hz, lm.phase_margin_deg


def pll_gains_for(crossover_hz: float, phase_margin_deg: float, v_d: float = 1.0) -> PIController:
    """PI gains placing the PLL open-loop crossover and phase margin exactly."""
    wc = 2 * math.pi * crossover_hz
    pm = math.radians(phase_margin_deg)
    return PIController(wc * math.sin(pm) / v_d, wc**2 * math.cos(pm) / v_d)


# ------------------------------------------------------ synthetic measurement

def synth_measurement(model: Callable, grid: FrequencyGrid, noise_rel: float = 0.0,
                      seed: int = 0, base: PerUnitBase | None = None,
                      label: str = "") -> FrequencyResponseSet:
    """Sample ``model(f) -> (n, 2, 2)`` with bounded multiplicative complex noise.

    Every entry is multiplied by ``1 + e`` with ``e`` uniform in the disc of
    radius ``noise_rel``.
    """
    if noise_rel < 0:
        raise ValueError("noise_rel must be >= 0")
    from .freqdata import WECS_BASE

    z = np.asarray(model(grid.points), dtype=complex).reshape(len(grid), 2, 2)
    if noise_rel > 0:
        rng = np.random.default_rng(seed)
        r = noise_rel * np.sqrt(rng.random(z.shape))
        phi = 2 * np.pi * rng.random(z.shape)
        z = z * (1 + r * np.exp(1j * phi))
    return FrequencyResponseSet(base or WECS_BASE, grid, z, label)

