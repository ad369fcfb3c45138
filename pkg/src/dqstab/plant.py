"""Plant description shared by the CLI, scripts and tests.

A plant file is flat JSON: the parameter field names of the rectifier and
inverter records, PI pairs as ``[kp, ki]``, plus ``power_pu``, ``n_farms``,
``f_sw_hz`` and two base blocks (``base`` for the HVDC side, ``wecs_base``
for a single wind unit).

The aggregated wind farm is referred to the collection bus through its
transformer, so on the collection-bus voltage its impedances are per unit
on ``(n_farms * wecs S_base, system V_base)``; moving them to the system
base multiplies by ``S_system / S_unit``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvariantViolation, ParseError
from .freqdata import (SYSTEM_BASE, WECS_BASE, FrequencyGrid, FrequencyResponseSet, PerUnitBase,
                       atomic_write_text, rebase)
from .models import (ControllerGains, OperatingPoint, PIController, PwmModel, VSCRectifierParams,
                     WECSInverterParams, aggregate_wind_s, pll_gains_for, vac_open_loop,
                     z_hvdc_full_s, z_wecs_matrix_s, loop_margins, pll_metrics)

SWEEPABLE = ("kp_vac", "ki_vac", "kp_pll", "ki_pll", "n_farms", "power_pu")

# ac-voltage tunings quoted for the rectifier and the two PLL tunings
VAC_UNSTABLE = PIController(0.09, 40.0)
VAC_RETUNED = PIController(0.2, 40.0)
PLL_NOMINAL = pll_gains_for(5.78, 47.0)
PLL_RETUNED = pll_gains_for(3.17, 42.0)


@dataclass(frozen=True)
class Plant:
    hvdc: VSCRectifierParams
    wecs: WECSInverterParams
    gains: ControllerGains
    power_pu: float = 1.0
    n_farms: int = 1
    f_sw_hz: float = 2000.0
    base: PerUnitBase = SYSTEM_BASE
    wecs_base: PerUnitBase = WECS_BASE

    def __post_init__(self):
        if int(self.n_farms) != self.n_farms or self.n_farms < 1:
            raise InvariantViolation("n_farms must be a positive integer")
        if not (math.isfinite(self.power_pu) and self.power_pu > 0):
            raise InvariantViolation("power_pu must be > 0")
        if not self.f_sw_hz > 0:
            raise InvariantViolation("f_sw_hz must be > 0")

    @property
    def op(self) -> OperatingPoint:
        return OperatingPoint.from_power(self.power_pu, self.wecs)

    @property
    def farm_factor(self) -> float:
        """Farm-unit-base to system-base impedance factor ``S_sys / (n S_unit)``."""
        return self.base.s_base / (self.n_farms * self.wecs_base.s_base)

    @property
    def farm_base(self) -> PerUnitBase:
        """Base of the aggregated farm referred to the collection bus."""
        return PerUnitBase(self.n_farms * self.wecs_base.s_base, self.base.v_base,
                           self.base.f_base)

    def with_param(self, name: str, value: float) -> "Plant":
        """Copy with one member of ``SWEEPABLE`` changed."""
        if name == "kp_vac":
            return replace(self, hvdc=replace(self.hvdc, h_vac=PIController(value, self.hvdc.h_vac.ki)))
        if name == "ki_vac":
            return replace(self, hvdc=replace(self.hvdc, h_vac=PIController(self.hvdc.h_vac.kp, value)))
        if name == "kp_pll":
            return replace(self, gains=replace(self.gains, pll=PIController(value, self.gains.pll.ki)))
        if name == "ki_pll":
            return replace(self, gains=replace(self.gains, pll=PIController(self.gains.pll.kp, value)))
        if name == "n_farms":
            if float(value) != int(value):
                raise InvariantViolation("n_farms must be an integer")
            return replace(self, n_farms=int(value))
        if name == "power_pu":
            return replace(self, power_pu=float(value))
        raise KeyError(f"unknown sweep parameter {name!r}; expected one of {SWEEPABLE}")


def reference_plant(h_vac: PIController = VAC_UNSTABLE, pll: PIController = PLL_NOMINAL,
                    delay: bool = False) -> Plant:
    """Tabulated passives with the fixture choices documented in the README.

    ``delay=False`` gives the delay-free PWM used for interconnection work.
    """
    f_sw = 2000.0
    pwm = PwmModel.from_switching(f_sw) if delay else PwmModel(1.0, 0.0)
    hvdc = VSCRectifierParams(r_c=0.00285, l_c=0.08, c_f=0.074, r_t=0.01, l_t=0.1, v_dc0=1.0,
                              pwm=pwm, h_i=PIController(0.6366, 14.25), h_vac=h_vac)
    wecs = WECSInverterParams(r_cw=0.00285, l_cw=0.12, c_wf=0.074, c_dc=4.0, r_tw=0.005,
                              l_tw=0.04, z_cable=(0.05, 0.1), pwm=pwm)
    gains = ControllerGains(PIController(1.0, 20.0), PIController(2.0, 20.0), pll)
    return Plant(hvdc, wecs, gains, power_pu=1.0, n_farms=4, f_sw_hz=f_sw)


def without_delay(plant: Plant) -> Plant:
    pwm = PwmModel(1.0, 0.0)
    return replace(plant, hvdc=replace(plant.hvdc, pwm=pwm), wecs=replace(plant.wecs, pwm=pwm))


# ----------------------------------------------------------------- responses

def hvdc_response(plant: Plant, grid: FrequencyGrid, neglect_delay: bool = True) -> FrequencyResponseSet:
    s = 2j * np.pi * grid.points
    z = z_hvdc_full_s(plant.hvdc, s, neglect_delay)
    return FrequencyResponseSet(plant.base, grid, z, "hvdc")


def wecs_unit_response(plant: Plant, grid: FrequencyGrid,
                       neglect_delay: bool = False) -> FrequencyResponseSet:
    """Single inverter terminal impedance on the unit base (what a test rig measures)."""
    s = 2j * np.pi * grid.points
    z = z_wecs_matrix_s(plant.wecs, plant.op, plant.gains, s, neglect_delay)
    return FrequencyResponseSet(plant.wecs_base, grid, z, "wecs")


def wind_farm_response(plant: Plant, grid: FrequencyGrid, neglect_delay: bool = True,
                       z_unit: np.ndarray | None = None) -> FrequencyResponseSet:
    """Aggregated farm at the collection bus, on the system base.

    ``z_unit`` replaces the analytical inverter impedance (e.g. a fitted one).
    """
    s = 2j * np.pi * grid.points
    if z_unit is None:
        z_unit = z_wecs_matrix_s(plant.wecs, plant.op, plant.gains, s, neglect_delay)
    z = aggregate_wind_s(z_unit, plant.wecs, plant.n_farms, s)
    # on the unit base, 1/n aggregation; the farm base is n units, so scale back by n
    farm = FrequencyResponseSet(plant.farm_base, grid, z * plant.n_farms, "wind_farm")
    return rebase(farm, plant.base)


def vac_crossover_hz(plant: Plant) -> float:
    f = np.logspace(0, 4, 4000)
    return loop_margins(f, func=lambda x: vac_open_loop(plant.hvdc, x)).crossover_hz


def pll_bandwidth_hz(plant: Plant) -> float:
    return pll_metrics(plant.gains.pll, plant.op.v_d)[0]


# ------------------------------------------------------------------- file I/O

def _pair(d: dict, key: str) -> PIController:
    v = d[key]
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ParseError(f"{key} must be [kp, ki]")
    return PIController(float(v[0]), float(v[1]))


def _base(d, key, default: PerUnitBase) -> PerUnitBase:
    if key not in d:
        return default
    b = d[key]
    return PerUnitBase(float(b["s_base_va"]), float(b["v_base_v"]), float(b.get("f_base_hz", 50.0)))


def plant_from_dict(d: dict) -> Plant:
    try:
        base = _base(d, "base", SYSTEM_BASE)
        wbase = _base(d, "wecs_base", WECS_BASE)
        f_sw = float(d.get("f_sw_hz", 2000.0))
        delay = bool(d.get("pwm_delay", False))
        pwm = PwmModel.from_switching(f_sw) if delay else PwmModel(1.0, 0.0)
        hvdc = VSCRectifierParams(
            r_c=float(d["r_c"]), l_c=float(d["l_c"]), c_f=float(d["c_f"]), r_t=float(d["r_t"]),
            l_t=float(d["l_t"]), v_dc0=float(d["v_dc0"]), pwm=pwm, h_i=_pair(d, "h_i"),
            h_vac=_pair(d, "h_vac"), f_base=base.f_base)
        wecs = WECSInverterParams(
            r_cw=float(d["r_cw"]), l_cw=float(d["l_cw"]), c_wf=float(d["c_wf"]),
            c_dc=float(d["c_dc"]), r_tw=float(d["r_tw"]), l_tw=float(d["l_tw"]),
            z_cable=tuple(float(x) for x in d["z_cable"]), pwm=pwm, f_base=wbase.f_base)
        gains = ControllerGains(_pair(d, "cc"), _pair(d, "vdc"), _pair(d, "pll"))
        n = d.get("n_farms", 1)
        if float(n) != int(n):
            raise ParseError("n_farms must be an integer")
        return Plant(hvdc, wecs, gains, float(d.get("power_pu", 1.0)), int(n), f_sw, base, wbase)
    except KeyError as exc:
        raise ParseError(f"plant file is missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"invalid plant file: {exc}") from None


def plant_to_dict(p: Plant) -> dict:
    h, w, g = p.hvdc, p.wecs, p.gains
    return {
        "base": {"s_base_va": p.base.s_base, "v_base_v": p.base.v_base, "f_base_hz": p.base.f_base},
        "wecs_base": {"s_base_va": p.wecs_base.s_base, "v_base_v": p.wecs_base.v_base,
                      "f_base_hz": p.wecs_base.f_base},
        "r_c": h.r_c, "l_c": h.l_c, "c_f": h.c_f, "r_t": h.r_t, "l_t": h.l_t, "v_dc0": h.v_dc0,
        "h_i": [h.h_i.kp, h.h_i.ki], "h_vac": [h.h_vac.kp, h.h_vac.ki],
        "r_cw": w.r_cw, "l_cw": w.l_cw, "c_wf": w.c_wf, "c_dc": w.c_dc, "r_tw": w.r_tw,
        "l_tw": w.l_tw, "z_cable": list(w.z_cable),
        "cc": [g.cc.kp, g.cc.ki], "vdc": [g.vdc.kp, g.vdc.ki], "pll": [g.pll.kp, g.pll.ki],
        "power_pu": p.power_pu, "n_farms": p.n_farms, "f_sw_hz": p.f_sw_hz,
        "pwm_delay": h.pwm.delay > 0,
    }


def load_plant(path) -> Plant:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ParseError("plant file must hold a JSON object")
    try:
        return plant_from_dict(data)
    except InvariantViolation as exc:
        raise ParseError(str(exc)) from None


def save_plant(p: Plant, path) -> None:
    atomic_write_text(path, json.dumps(plant_to_dict(p), indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------- state space

def state_space(plant: Plant, **kw):
    from .statespace import build_interconnected_ss

    return build_interconnected_ss(plant.hvdc, plant.wecs, plant.gains, plant.op,
                                   n_farms=plant.n_farms, s_system=plant.base.s_base,
                                   s_unit=plant.wecs_base.s_base, **kw)


def rebase_system(plant: Plant, s_base_new: float) -> Plant:
    """Same physical system with the HVDC-side power base changed to ``s_base_new``.

    Voltages keep their base, so impedances scale by ``a = S_new / S_old``,
    susceptances by ``1 / a``, and controller gains by the units they map:
    current-to-voltage gains by ``a``, voltage-to-current gains by ``1 / a``.
    """
    a = s_base_new / plant.base.s_base
    h = plant.hvdc
    hvdc = replace(h, r_c=h.r_c * a, l_c=h.l_c * a, c_f=h.c_f / a, r_t=h.r_t * a, l_t=h.l_t * a,
                   h_i=h.h_i.scaled(a), h_vac=h.h_vac.scaled(1 / a))
    base = PerUnitBase(s_base_new, plant.base.v_base, plant.base.f_base)
    return replace(plant, hvdc=hvdc, base=base)


# ------------------------------------------------------------- GNC helpers

def interconnection_report(plant: Plant, grid: FrequencyGrid | None = None):
    """GNC verdict of the delay-free HVDC / wind-farm interconnection."""
    from .gnc import assess_stability, default_analysis_grid, minor_loop_gain

    grid = default_analysis_grid() if grid is None else grid
    return assess_stability(minor_loop_gain(hvdc_response(plant, grid),
                                            wind_farm_response(plant, grid)))


def mitigation_report(plant: Plant, grid: FrequencyGrid | None = None):
    """q-axis magnitude intersection and bandwidth-ratio rule for ``plant``."""
    from .gnc import default_analysis_grid, qq_mitigation_check

    grid = default_analysis_grid() if grid is None else grid
    return qq_mitigation_check(grid, hvdc_response(plant, grid).channel("qq"),
                               wind_farm_response(plant, grid).channel("qq"),
                               pll_bandwidth_hz(plant), vac_crossover_hz(plant))
