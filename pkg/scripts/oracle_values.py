"""Independent reference values frozen into the test suite.

Nothing here calls the package's impedance or fitting code.  Formulas are
typed out again with ``cmath``; the inverter impedance is also re-derived
numerically from its time-domain equations (central-difference Jacobian,
then ``C (sI - A)^-1 B``).  Run it and paste the printed numbers into the
tests when a fixture changes.
"""

import json
import math

import numpy as np

WB = 2 * math.pi * 50.0

# rectifier and inverter passives, written out independently of plant.py
RC, LC, CF, VDC0 = 0.00285, 0.08, 0.074, 1.0
HI = (0.6366, 14.25)
RCW, LCW, CDC = 0.00285, 0.12, 4.0
CC, VDC_PI = (1.0, 20.0), (2.0, 20.0)


def pi(g, s):
    return g[0] + g[1] / s


def pll_gains(fc, pm_deg):
    wc = 2 * math.pi * fc
    pm = math.radians(pm_deg)
    return (wc * math.sin(pm), wc * wc * math.cos(pm))


PLL = pll_gains(5.78, 47.0)


def rectifier_point(f, hvac=(0.09, 40.0)):
    s = 2j * math.pi * f
    hi = pi(HI, s)
    return (VDC0 * hi + RC + s * LC / WB) / (1 - 1 + VDC0 * hi * pi(hvac, s))


def inverter_dd_formula(f, i_d, v_dc, d_d, c_dc=CDC, delay=0.75e-3):
    s = 2j * math.pi * f
    h_pwm = (1 - 0.5 * delay * s) / (1 + 0.5 * delay * s)
    z0 = RCW + s * LCW / WB
    g_cc = pi(CC, s) * v_dc * h_pwm / z0
    cs = s * c_dc / WB
    g_vdc = pi(VDC_PI, s) * (g_cc / (1 + g_cc)) / cs
    psi_n = d_d * g_vdc * (1 + g_cc) + g_cc
    psi_d = 1 + i_d * z0 * g_vdc * (1 + g_cc)
    a = v_dc - d_d * i_d / cs
    return (z0 + d_d * d_d / cs + a * z0 * psi_n / psi_d) / (1 - a * h_pwm / psi_d)


def inverter_time_domain(p_pu):
    """Per-axis inverter ODE on a stiff terminal: states i_d, i_q, vdc, vdc_q,
    xc_d, xc_q, xdc, pll_x, theta.  Returns (A, B) by central differences."""
    i_d, v_d, v_dc = p_pu, 1.0, 1.0
    d_d = (v_d + RCW * i_d) / v_dc
    d_q = LCW * i_d / v_dc
    p_in = d_d * i_d * v_dc
    xc0 = np.array([d_d - v_d, d_q - LCW * i_d / v_dc])
    x0 = np.array([i_d, 0.0, v_dc, v_dc, xc0[0], xc0[1], i_d, 0.0, 0.0])
    u0 = np.array([v_d, 0.0])

    def f(x, u):
        i0, i1, vdc, vdq, xc_d, xc_q, xdc, xp, th = x
        c, sn = math.cos(th), math.sin(th)
        v_cd, v_cq = c * u[0] + sn * u[1], -sn * u[0] + c * u[1]
        i_cd, i_cq = c * i0 + sn * i1, -sn * i0 + c * i1
        id_ref = VDC_PI[0] * (vdc - v_dc) + xdc
        e_d, e_q = id_ref - i_cd, -i_cq
        dec_d, dec_q = -LCW * i1 / v_dc, LCW * i_cd / v_dc
        dd_c = CC[0] * e_d + xc_d + v_cd + dec_d
        dq_c = CC[0] * e_q + xc_q + v_cq + dec_q
        dd_g, dq_g = dd_c, sn * dd_c + c * dq_c
        di0 = WB / LCW * (dd_g * vdc - u[0] - RCW * i0 + LCW * i1)
        di1 = WB / LCW * (dq_g * vdq - u[1] - RCW * i1 - LCW * i0)
        dvdc = WB / CDC * (p_in / v_dc - (dd_g - dec_d) * i0)
        dvdq = WB / CDC * (-d_q * i1)
        return np.array([di0, di1, dvdc, dvdq, CC[1] * e_d, CC[1] * e_q, VDC_PI[1] * (vdc - v_dc),
                         PLL[1] * v_cq, PLL[0] * v_cq + xp])

    assert np.max(np.abs(f(x0, u0))) < 1e-9
    h = 1e-6
    a = np.column_stack([(f(x0 + h * e, u0) - f(x0 - h * e, u0)) / (2 * h) for e in np.eye(9)])
    b = np.column_stack([(f(x0, u0 + h * e) - f(x0, u0 - h * e)) / (2 * h) for e in np.eye(2)])
    return a, b


def inverter_impedance_td(p_pu, f):
    a, b = inverter_time_domain(p_pu)
    s = 2j * math.pi * f
    y = -np.linalg.solve(s * np.eye(9) - a, b)[:2]  # current into the converter per terminal volt
    return np.linalg.inv(y)


def passive_poles():
    """Branch network with both converters shorted, from the scalar RLC ladder
    ``L_c | C_f | (r_l, l_l) | C_wf | L_cw`` shifted by +-j w_b (synchronous frame).
    Wind-side elements referred to the system base with k = 500 / (4 * 150)."""
    k = 500.0 / (4 * 150.0)
    r_l, l_l = 0.01 + k * (0.005 + 0.05), 0.1 + k * (0.04 + 0.1)
    # states: i_c, v_f, i_l, v_w (own base), i_w (own base); stationary-frame real ODE
    m = np.zeros((5, 5))
    m[0, 0], m[0, 1] = -RC / LC, -1 / LC
    m[1, 0], m[1, 2] = 1 / 0.074, 1 / 0.074
    m[2, 1], m[2, 2], m[2, 3] = -1 / l_l, -r_l / l_l, 1 / l_l
    m[3, 2], m[3, 4] = -k / 0.074, 1 / 0.074
    m[4, 3], m[4, 4] = -1 / LCW, -RCW / LCW
    lam = np.linalg.eigvals(WB * m)
    return sorted(np.concatenate([lam + 1j * WB, lam - 1j * WB]), key=lambda z: (z.real, z.imag))


if __name__ == "__main__":
    out = {
        "rectifier_8p5hz": rectifier_point(8.5),
        "inverter_dd_zero_op_3hz": inverter_dd_formula(3.0, 0.0, 1.0, 0.0),
        "inverter_td_5hz_rated": inverter_impedance_td(1.0, 5.0).tolist(),
        "passive_poles": passive_poles(),
    }
    print(json.dumps(out, default=lambda z: [z.real, z.imag], indent=1))
