"""Linear state-space model of the rectifier / wind-farm interconnection.

The model is written as a nonlinear per-unit dq ODE and linearised at the
steady state by complex-step differentiation, which gives Jacobians exact
to rounding.  It shares no code with the impedance closed forms, so it is
an independent check on the frequency-domain verdicts.

State inventory (frozen; participation assertions rely on these names)::

    hv_i_d, hv_i_q      rectifier filter current (out of converter)
    hv_v_d, hv_v_q      rectifier ac filter capacitor voltage
    hv_xi_d, hv_xi_q    rectifier current-controller integrators
    hv_xv_d, hv_xv_q    rectifier ac-voltage-controller integrators
    ln_i_d, ln_i_q      series branch current, wind farm -> HVDC (system pu)
    wt_i_d, wt_i_q      inverter filter current (out of inverter)
    wt_v_d, wt_v_q      inverter ac filter capacitor voltage
    wt_vdc              inverter dc-link voltage
    wt_xc_d, wt_xc_q    inverter current-controller integrators
    wt_xdc              dc-voltage-controller integrator
    pll_x, pll_theta    PLL integrator (rad/s) and angle (rad)
    wt_vdc_q            q-axis image of the dc link (``diagonal`` inverter only)

Two inverter variants are available.  ``coupled`` is the plain physical
model: one dc link fed by a constant-power source, duty ratios rotated by
the PLL angle in both axes.  ``diagonal`` keeps the same equations but
splits the cross-axis paths that the diagonal impedance closed forms leave
out: the d axis sees the dc link through ``D_d i_d + I_d d_d`` only, the q
axis through ``D_q i_q`` only, the PLL angle rotates only the q-axis duty,
and the dc source is a constant current.  Its linearisation therefore
describes the same small-signal system as the impedance models, which is
what a like-for-like stability cross-check needs.

Rectifier and branch quantities are on the system base; the aggregated
wind farm is one equivalent inverter in its own per-unit (the single-unit
base), so that its duty ratios and controller gains are those of every
turbine.  ``k = S_system / (n S_unit)`` converts impedances from the farm
base to the system base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import InvalidOperatingPoint, NumericalFailure, RepeatedEigenvalue
from .models import ControllerGains, OperatingPoint, VSCRectifierParams, WECSInverterParams

STATE_NAMES = (
    "hv_i_d", "hv_i_q", "hv_v_d", "hv_v_q", "hv_xi_d", "hv_xi_q", "hv_xv_d", "hv_xv_q",
    "ln_i_d", "ln_i_q",
    "wt_i_d", "wt_i_q", "wt_v_d", "wt_v_q", "wt_vdc", "wt_xc_d", "wt_xc_q", "wt_xdc",
    "pll_x", "pll_theta",
)
STATE_NAMES_DIAGONAL = STATE_NAMES + ("wt_vdc_q",)
INVERTER_MODELS = ("diagonal", "coupled")
STATE_GROUPS = {
    "hvdc_current_controller": ("hv_xi_d", "hv_xi_q"),
    "hvdc_ac_voltage_controller": ("hv_xv_d", "hv_xv_q"),
    "hvdc_filter": ("hv_i_d", "hv_i_q", "hv_v_d", "hv_v_q"),
    "branch": ("ln_i_d", "ln_i_q"),
    "wecs_filter": ("wt_i_d", "wt_i_q", "wt_v_d", "wt_v_q"),
    "wecs_dc_link": ("wt_vdc", "wt_vdc_q"),
    "wecs_current_controller": ("wt_xc_d", "wt_xc_q"),
    "wecs_dc_voltage_controller": ("wt_xdc",),
    "pll": ("pll_x", "pll_theta"),
}
INPUT_NAMES = ("hv_vref_d", "hv_vref_q", "wt_p_in")
OUTPUT_NAMES = ("acc_v_d", "acc_v_q", "ln_i_d", "ln_i_q")
REPEAT_TOL = 1e-9
NEUTRAL_TOL = 1e-12


def _j(x):
    """Multiply a (d, q) pair by j."""
    return (-x[1], x[0])


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    a_matrix: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    state_names: tuple
    x0: np.ndarray | None = None

    def __post_init__(self):
        n = self.a_matrix.shape[0]
        if self.a_matrix.shape != (n, n) or len(self.state_names) != n:
            raise ValueError("inconsistent state dimension")
        if self.b.shape[0] != n or self.c.shape[1] != n:
            raise ValueError("inconsistent B/C dimensions")
        if self.d.shape != (self.c.shape[0], self.b.shape[1]):
            raise ValueError("inconsistent D dimensions")

    @property
    def n_states(self) -> int:
        return self.a_matrix.shape[0]

    def index(self, name: str) -> int:
        return self.state_names.index(name)


@dataclass(frozen=True)
class InterconnectionPlant:
    """Everything the nonlinear model needs, already reduced to numbers."""

    hvdc: VSCRectifierParams
    wecs: WECSInverterParams
    gains: ControllerGains
    op: OperatingPoint
    k: float  # farm-base to system-base impedance factor
    source_conductance: bool = True
    shorted: bool = False  # converter ac voltages forced to zero (passive-network check)
    diagonal: bool = False  # per-axis inverter, see module docstring


def _rot(theta, x):
    c, s = np.cos(theta), np.sin(theta)
    return (c * x[0] - s * x[1], s * x[0] + c * x[1])


def _steady_state(pl: InterconnectionPlant):
    h, w, op, k = pl.hvdc, pl.wecs, pl.op, pl.k
    if op.v_d <= 0:
        raise InvalidOperatingPoint("terminal voltage must be positive")
    v_w = np.array([op.v_d, 0.0])
    i_w = np.array([op.i_d, 0.0])
    d = np.array([op.d_d, op.d_q])
    vconv = d * op.v_dc
    # the operating point must balance the inverter filter at base frequency
    resid = vconv - v_w - w.r_cw * i_w - np.array(_j(w.l_cw * i_w))
    if np.max(np.abs(resid)) > 1e-9 * max(1.0, np.max(np.abs(vconv))):
        raise InvalidOperatingPoint(f"duty ratios do not balance the filter (residual {resid})")
    i_l_own = i_w - np.array(_j(w.c_wf * v_w))
    i_l = i_l_own / k
    r_l = h.r_t + k * (w.r_tw + w.z_cable[0])
    l_l = h.l_t + k * (w.l_tw + w.z_cable[1])
    v_f = v_w - r_l * i_l - np.array(_j(l_l * i_l))
    i_c = np.array(_j(h.c_f * v_f)) - i_l
    v_c = v_f + h.r_c * i_c + np.array(_j(h.l_c * i_c))
    g_h = h.pwm.gain
    x_i = ((v_c - np.array(_j(h.l_c * i_c))) / g_h - v_f) / h.v_dc0
    x_v = i_c
    g_w = w.pwm.gain
    x_c = (d - np.array(_j(w.l_cw * i_w)) / op.v_dc) / g_w - v_w
    p_in = float(d @ i_w) * op.v_dc
    x0 = np.concatenate([i_c, v_f, x_i, x_v, i_l, i_w, v_w, [op.v_dc], x_c, [op.i_d], [0.0, 0.0]])
    if pl.diagonal:
        x0 = np.concatenate([x0, [op.v_dc]])
    refs = {"v_ref": v_f, "vdc_ref": op.v_dc, "p_in": p_in, "r_l": r_l, "l_l": l_l,
            "d_q": op.d_q, "i_q": 0.0}
    return x0, refs


def _rhs(pl: InterconnectionPlant, refs, x, u):
    """Time derivative of the state (s^-1 per unit); works on complex x for complex-step."""
    h, w, g, k = pl.hvdc, pl.wecs, pl.gains, pl.k
    wb_h, wb_w = h.omega_base, w.omega_base
    i_c, v_f, x_i, x_v = x[0:2], x[2:4], x[4:6], x[6:8]
    i_l = x[8:10]
    i_w, v_w, vdc, x_c, x_dc = x[10:12], x[12:14], x[14], x[15:17], x[17]
    x_pll, theta = x[18], x[19]
    v_ref = (u[0], u[1])
    p_in = u[2]

    # rectifier: ac-voltage PI -> current PI with voltage feedforward and dq decoupling
    e_v = (v_ref[0] - v_f[0], v_ref[1] - v_f[1])
    i_ref = (h.h_vac.kp * e_v[0] + x_v[0], h.h_vac.kp * e_v[1] + x_v[1])
    e_i = (i_ref[0] - i_c[0], i_ref[1] - i_c[1])
    jl_ic = _j((h.l_c * i_c[0], h.l_c * i_c[1]))
    g_h = h.pwm.gain
    v_c = [g_h * (h.v_dc0 * (h.h_i.kp * e_i[m] + x_i[m]) + v_f[m]) + jl_ic[m] for m in (0, 1)]
    if pl.shorted:
        v_c = [0.0 * v_c[0], 0.0 * v_c[1]]
    dxh = [0.0] * 8
    for m in (0, 1):
        dxh[m] = wb_h / h.l_c * (v_c[m] - v_f[m] - h.r_c * i_c[m] - jl_ic[m])
    jc_vf = _j((h.c_f * v_f[0], h.c_f * v_f[1]))
    for m in (0, 1):
        dxh[2 + m] = wb_h / h.c_f * (i_c[m] + i_l[m] - jc_vf[m])
        dxh[4 + m] = h.h_i.ki * e_i[m]
        dxh[6 + m] = h.h_vac.ki * e_v[m]

    # series branch (system pu)
    r_l, l_l = refs["r_l"], refs["l_l"]
    jl_il = _j((l_l * i_l[0], l_l * i_l[1]))
    dxl = [wb_h / l_l * (v_w[m] - v_f[m] - r_l * i_l[m] - jl_il[m]) for m in (0, 1)]

    # inverter in the PLL frame
    v_cf = _rot(-theta, v_w)
    i_cf = _rot(-theta, i_w)
    id_ref = g.vdc.kp * (vdc - refs["vdc_ref"]) + x_dc
    e_c = (id_ref - i_cf[0], 0.0 - i_cf[1])
    if pl.diagonal:
        # grid-frame q current in the d decoupling keeps the cancellation exact
        jl_iw = _j((w.l_cw * i_cf[0], w.l_cw * i_w[1]))
    else:
        jl_iw = _j((w.l_cw * i_cf[0], w.l_cw * i_cf[1]))
    g_w = w.pwm.gain
    d_cf = [g_w * (g.cc.kp * e_c[m] + x_c[m] + v_cf[m]) + jl_iw[m] / refs["vdc_ref"] for m in (0, 1)]
    if pl.diagonal:
        vdc_q = x[20]
        d_g = (d_cf[0], np.sin(theta) * d_cf[0] + np.cos(theta) * d_cf[1])
        v_conv = (d_g[0] * vdc, d_g[1] * vdc_q)
    else:
        d_g = _rot(theta, d_cf)
        v_conv = (d_g[0] * vdc, d_g[1] * vdc)
    if pl.shorted:
        v_conv = (0.0 * v_conv[0], 0.0 * v_conv[1])
    jl_w = _j((w.l_cw * i_w[0], w.l_cw * i_w[1]))
    jc_vw = _j((w.c_wf * v_w[0], w.c_wf * v_w[1]))
    dxw = [0.0] * 10
    for m in (0, 1):
        dxw[m] = wb_w / w.l_cw * (v_conv[m] - v_w[m] - w.r_cw * i_w[m] - jl_w[m])
        dxw[2 + m] = wb_w / w.c_wf * (i_w[m] - k * i_l[m] - jc_vw[m])
    i_src = p_in / vdc if pl.source_conductance else p_in / refs["vdc_ref"]
    if pl.diagonal:
        # the d-duty decoupling term carries q current; it stays out of the dc balance
        d_own = d_g[0] - jl_iw[0] / refs["vdc_ref"]
        dxw[4] = wb_w / w.c_dc * (i_src - d_own * i_w[0] - refs["d_q"] * refs["i_q"])
    else:
        dxw[4] = wb_w / w.c_dc * (i_src - (d_g[0] * i_w[0] + d_g[1] * i_w[1]))
    dxw[5] = g.cc.ki * e_c[0]
    dxw[6] = g.cc.ki * e_c[1]
    dxw[7] = g.vdc.ki * (vdc - refs["vdc_ref"])
    dxw[8] = g.pll.ki * v_cf[1]
    dxw[9] = g.pll.kp * v_cf[1] + x_pll
    if pl.diagonal:
        dxw.append(wb_w / w.c_dc * refs["d_q"] * (refs["i_q"] - i_w[1]))
    return np.array(dxh + dxl + dxw)


def _outputs(pl: InterconnectionPlant, refs, x, u):
    # collection-bus voltage: rectifier capacitor voltage plus the HVDC transformer drop
    h = pl.hvdc
    i_l, v_f = x[8:10], x[2:4]
    jl = _j((h.l_t * i_l[0], h.l_t * i_l[1]))
    return np.array([v_f[0] + h.r_t * i_l[0] + jl[0], v_f[1] + h.r_t * i_l[1] + jl[1],
                     i_l[0], i_l[1]])


def _complex_step_jacobian(fun, z0, h=1e-30):
    z0 = np.asarray(z0, dtype=float)
    cols = []
    for j in range(z0.size):
        z = z0.astype(complex)
        z[j] += 1j * h
        cols.append(np.imag(fun(z)) / h)
    return np.array(cols).T


def build_interconnected_ss(hvdc: VSCRectifierParams, wecs: WECSInverterParams,
                            gains: ControllerGains, op: OperatingPoint, n_farms: int = 1,
                            k: float | None = None, s_system: float = 500e6,
                            s_unit: float = 150e6, source_conductance: bool | None = None,
                            converters_shorted: bool = False,
                            inverter_model: str = "diagonal") -> StateSpaceModel:
    """Linearised model of rectifier + branch + ``n_farms`` aggregated inverters.

    ``k`` overrides the farm-to-system impedance factor ``s_system / (n s_unit)``.
    The PWM transport delay is not represented (finite-dimensional model).
    ``converters_shorted`` replaces both converter ac voltages by zero and
    linearises about the de-energised state, leaving the passive network.
    ``inverter_model`` is ``"diagonal"`` or ``"coupled"`` (module docstring);
    ``source_conductance`` defaults to on for ``coupled`` and off for
    ``diagonal``.
    """
    if inverter_model not in INVERTER_MODELS:
        raise ValueError(f"inverter_model must be one of {INVERTER_MODELS}")
    diagonal = inverter_model == "diagonal"
    if source_conductance is None:
        source_conductance = not diagonal
    if n_farms < 1:
        raise ValueError("n_farms must be >= 1")
    k = s_system / (n_farms * s_unit) if k is None else float(k)
    if not (np.isfinite(k) and k > 0):
        raise InvalidOperatingPoint("farm-to-system factor must be > 0")
    pl = InterconnectionPlant(hvdc, wecs, gains, op, k, source_conductance, converters_shorted,
                              diagonal)
    x0, refs = _steady_state(pl)
    if converters_shorted:
        x0 = np.zeros_like(x0)
        x0[STATE_NAMES.index("wt_vdc")] = op.v_dc
        if diagonal:
            x0[-1] = op.v_dc
        refs = dict(refs, v_ref=np.zeros(2), p_in=0.0)
    u0 = np.array([refs["v_ref"][0], refs["v_ref"][1], refs["p_in"]])
    f0 = _rhs(pl, refs, x0, u0)
    if np.max(np.abs(f0)) > 1e-8:
        raise InvalidOperatingPoint(f"steady state residual {np.max(np.abs(f0)):.3g}")
    a = _complex_step_jacobian(lambda z: _rhs(pl, refs, z, u0), x0)
    if not np.all(np.isfinite(a)):
        raise InvalidOperatingPoint("linearisation produced non-finite entries")
    b = _complex_step_jacobian(lambda z: _rhs(pl, refs, x0, z), u0)
    c = _complex_step_jacobian(lambda z: _outputs(pl, refs, z, u0), x0)
    d = np.zeros((c.shape[0], b.shape[1]))
    names = STATE_NAMES_DIAGONAL if diagonal else STATE_NAMES
    return StateSpaceModel(a, b, c, d, names, x0)


@dataclass(frozen=True, eq=False)
class EigenReport:
    eigenvalues: np.ndarray
    frequencies_hz: np.ndarray
    damping: np.ndarray
    unstable: np.ndarray
    neutral: np.ndarray = field(default_factory=lambda: np.array([], dtype=complex))

    def _active(self) -> np.ndarray:
        if not self.neutral.size:
            return self.eigenvalues
        keep = ~np.isin(self.eigenvalues, self.neutral)
        return self.eigenvalues[keep] if keep.any() else self.eigenvalues

    @property
    def dominant(self) -> complex:
        """Largest real part among non-neutral modes (positive imaginary part on ties)."""
        return complex(self._active()[0])

    @property
    def max_real(self) -> float:
        return float(self._active()[0].real)


def _pair_order(ev: np.ndarray) -> np.ndarray:
    # real part descending; within a conjugate pair the +imag member first
    return np.lexsort((-ev.imag, -np.round(ev.real, 9)))


def eigenvalues(ss: StateSpaceModel | np.ndarray) -> EigenReport:
    """Sorted spectrum.  Eigenvalues within ``NEUTRAL_TOL * ||A||`` of the origin
    (free integrators) are listed as neutral and left out of the verdict."""
    a = ss.a_matrix if isinstance(ss, StateSpaceModel) else np.asarray(ss, dtype=float)
    try:
        ev = sla.eigvals(a, check_finite=True)  # LAPACK geev balances by default
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(str(exc)) from exc
    ev = ev[_pair_order(ev)]
    mag = np.abs(ev)
    damping = np.where(mag > 0, -ev.real / np.where(mag > 0, mag, 1.0), 1.0)
    scale = max(1.0, float(np.linalg.norm(a, 1))) if a.size else 1.0
    neutral = ev[mag <= NEUTRAL_TOL * scale]
    active = ev[mag > NEUTRAL_TOL * scale]
    return EigenReport(ev, np.abs(ev.imag) / (2 * np.pi), damping, active[active.real > 0], neutral)


@dataclass(frozen=True, eq=False)
class ParticipationMatrix:
    """``entries[k, i]``: share of state ``k`` in mode ``i`` (columns sum to one)."""

    entries: np.ndarray
    eigenvalues: np.ndarray
    state_names: tuple

    def ranking(self, mode: int) -> list[tuple[str, float]]:
        col = self.entries[:, mode]
        order = np.argsort(-col, kind="stable")
        return [(self.state_names[i], float(col[i])) for i in order]

    def group_ranking(self, mode: int, groups: dict = STATE_GROUPS) -> list[tuple[str, float]]:
        col = self.entries[:, mode]
        totals = {g: float(sum(col[self.state_names.index(n)] for n in names))
                  for g, names in groups.items() if all(n in self.state_names for n in names)}
        return sorted(totals.items(), key=lambda kv: -kv[1])

    def mode_index(self, eigenvalue: complex) -> int:
        return int(np.argmin(np.abs(self.eigenvalues - eigenvalue)))


def participation_factors(ss: StateSpaceModel | np.ndarray,
                          state_names: Sequence[str] | None = None) -> ParticipationMatrix:
    if isinstance(ss, StateSpaceModel):
        a, names = ss.a_matrix, ss.state_names
    else:
        a = np.asarray(ss, dtype=float)
        names = tuple(state_names) if state_names is not None else tuple(
            f"x{i}" for i in range(a.shape[0]))
    ev, vl, vr = sla.eig(a, left=True, right=True)
    diffs = np.abs(ev[:, None] - ev[None, :])
    np.fill_diagonal(diffs, np.inf)
    if ev.size > 1 and np.min(diffs) < REPEAT_TOL * max(1.0, np.max(np.abs(ev))):
        raise RepeatedEigenvalue("eigenvalues are not distinct; participation undefined")
    order = _pair_order(ev)
    ev, vl, vr = ev[order], vl[:, order], vr[:, order]
    # scipy returns left vectors with vl^H A = lambda vl^H; the left row vector is conj(vl)
    prod = np.conj(vl) * vr
    p = np.abs(prod)
    p = p / p.sum(axis=0, keepdims=True)
    return ParticipationMatrix(p, ev, tuple(names))


@dataclass(frozen=True, eq=False)
class SweepResult:
    values: np.ndarray
    eigenvalues: list
    max_real: np.ndarray
    crossing_value: float | None
    dominant: np.ndarray


def sweep_gain(builder: Callable[[float], StateSpaceModel | np.ndarray],
               values: Sequence[float]) -> SweepResult:
    """Eigenvalues of ``builder(v)`` for each ``v`` and the interpolated stability crossing."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("a sweep needs at least two values")
    reports = [eigenvalues(builder(v)) for v in values]
    max_real = np.array([r.max_real for r in reports])
    dominant = np.array([r.dominant for r in reports])
    crossing = None
    for i in range(values.size - 1):
        a, b = max_real[i], max_real[i + 1]
        if a == 0:
            crossing = float(values[i])
            break
        if a * b < 0:
            crossing = float(values[i] + (values[i + 1] - values[i]) * a / (a - b))
            break
    return SweepResult(values, [r.eigenvalues for r in reports], max_real, crossing, dominant)


def initial_condition_response(ss: StateSpaceModel | np.ndarray, x0, t_end: float, dt: float):
    """Free response ``x(t) = expm(A t) x0`` stepped with the exact one-step propagator.

    Returns ``(t, x)`` with ``x`` of shape ``(len(t), n)``.
    """
    if not dt > 0 or not t_end > dt:
        raise ValueError("need dt > 0 and t_end > dt")
    a = ss.a_matrix if isinstance(ss, StateSpaceModel) else np.asarray(ss, dtype=float)
    steps = int(math.floor(t_end / dt + 1e-9))
    phi = sla.expm(a * dt)
    x = np.empty((steps + 1, a.shape[0]))
    x[0] = np.asarray(x0, dtype=float)
    for i in range(steps):
        x[i + 1] = phi @ x[i]
    return np.arange(steps + 1) * dt, x


def dumps_sweep_csv(result: SweepResult, n_modes: int = 6) -> str:
    """``param,re_lambda_1,im_lambda_1,...`` for the ``n_modes`` leading eigenvalues."""
    import csv
    import io

    from .freqdata import _fmt

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["param"]
    for k in range(1, n_modes + 1):
        header += [f"re_lambda_{k}", f"im_lambda_{k}"]
    w.writerow(header)
    for v, ev in zip(result.values, result.eigenvalues):
        row = [_fmt(v)]
        for e in ev[:n_modes]:
            row += [_fmt(e.real), _fmt(e.imag)]
        w.writerow(row)
    crossing = "none" if result.crossing_value is None else _fmt(result.crossing_value)
    buf.write(f"# crossing_value={crossing}\n")
    return buf.getvalue()


def dumps_timeseries_csv(t, x, state_names: Sequence[str]) -> str:
    import csv
    import io

    from .freqdata import _fmt

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_s", *state_names])
    for ti, row in zip(t, x):
        w.writerow([_fmt(ti), *[_fmt(v) for v in row]])
    return buf.getvalue()
