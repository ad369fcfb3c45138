"""Batch command-line front end: fit, stability, extract, sweep, synth.

Exit codes: 0 ok or stable, 1 input error, 2 not converged, 3 unstable,
4 analysis precondition failed (loci not closed inside the unit circle).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BaseMismatch, ClosureViolation, DqStabError, InvalidRange, NumericalFailure,
                     PassesThroughMinusOne)
from .freqdata import (FrequencyGrid, FrequencyResponseSet, PerUnitBase, atomic_write_text,
                       dumps_response_csv, load_response_csv, make_log_grid, rebase)
from .models import synth_measurement
from .rational import dumps_coeffs, evaluate, fit_auto_order, loads_coeffs

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_UNSTABLE, EXIT_PRECONDITION = 0, 1, 2, 3, 4
CHANNELS = ("dd", "dq", "qd", "qq")
ZERO_CHANNEL = "# channel is identically zero\n"
DEFAULT_GRID = "1:5000:75"
GLOBAL_KEYS = ("grid", "base_mva", "base_kv", "rebase", "seed", "out_dir")


class InputError(DqStabError):
    pass


@dataclass
class AnalysisConfig:
    command: str
    plant_file: str | None = None
    grid: str | None = None
    base_mva: float | None = None
    base_kv: float | None = None
    rebase: bool = False
    seed: int = 0
    out_dir: str = "."
    options: dict = field(default_factory=dict)

    def grid_or(self, default: str) -> FrequencyGrid:
        return parse_grid(self.grid or default)

    def out(self, name: str) -> Path:
        return Path(self.out_dir) / name


def parse_grid(text: str) -> FrequencyGrid:
    parts = text.split(":")
    if len(parts) != 3:
        raise InputError(f"grid must be fmin:fmax:n, got {text!r}")
    try:
        f_min, f_max, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise InputError(f"grid must be fmin:fmax:n, got {text!r}") from None
    try:
        return make_log_grid(f_min, f_max, n)
    except (InvalidRange, ValueError) as exc:
        raise InputError(str(exc)) from None


def parse_range(text: str) -> np.ndarray:
    parts = text.split(":")
    try:
        if len(parts) == 1:
            vals = np.array([float(parts[0])])
        elif len(parts) == 2:
            vals = np.linspace(float(parts[0]), float(parts[1]), 10)
        elif len(parts) == 3:
            vals = np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))
        else:
            raise ValueError
    except ValueError:
        raise InputError(f"range must be start:stop[:n], got {text!r}") from None
    if vals.size < 2:
        raise InputError("a sweep needs at least two values")
    return vals


def _check_base(actual: PerUnitBase, cfg: AnalysisConfig, what: str) -> PerUnitBase | None:
    """Base requested by the flags if it differs from ``actual`` (None if it agrees)."""
    s = actual.s_base if cfg.base_mva is None else cfg.base_mva * 1e6
    v = actual.v_base if cfg.base_kv is None else cfg.base_kv * 1e3
    wanted = PerUnitBase(s, v, actual.f_base)
    if wanted == actual:
        return None
    if not cfg.rebase:
        raise BaseMismatch(f"{what} is on {actual.mva:g} MVA / {actual.kv:g} kV but the analysis "
                           f"base is {wanted.mva:g} MVA / {wanted.kv:g} kV (use --rebase)")
    return wanted


def _load_plant(cfg: AnalysisConfig):
    from .plant import load_plant, rebase_system

    if cfg.plant_file is None:
        raise InputError("a plant file is required")
    plant = load_plant(cfg.plant_file)
    wanted = _check_base(plant.base, cfg, "plant")
    if wanted is not None:
        if wanted.v_base != plant.base.v_base:
            raise InputError("rebasing the plant voltage base is not supported")
        plant = rebase_system(plant, wanted.s_base)
    return plant


def _fit_channels(rs: FrequencyResponseSet, err_target: float, max_order: int):
    fits = {}
    for ch in CHANNELS:
        z = rs.channel(ch)
        if not np.any(z != 0):
            fits[ch] = None
            continue
        fits[ch] = fit_auto_order((rs.grid, z), err_target, max_order)
    return fits


def _evaluate_fits(fits: dict, grid: FrequencyGrid) -> np.ndarray:
    z = np.zeros((len(grid), 2, 2), dtype=complex)
    for ch, idx in zip(CHANNELS, ((0, 0), (0, 1), (1, 0), (1, 1))):
        if fits.get(ch) is not None:
            z[:, idx[0], idx[1]] = evaluate(fits[ch], grid.points)
    return z


# ----------------------------------------------------------------- commands

def cmd_fit(cfg: AnalysisConfig) -> int:
    rs = load_response_csv(cfg.options["input"])
    wanted = _check_base(rs.base, cfg, "measurement")
    if wanted is not None:
        rs = rebase(rs, wanted)
    target = cfg.options.get("err_target", 1e-3)
    fits = _fit_channels(rs, target, cfg.options.get("max_order", 8))
    lines = [f"err_target = {target!r}"]
    ok = True
    for ch in CHANNELS:
        path = cfg.out(f"fit_{ch}.coef")
        if fits[ch] is None:
            atomic_write_text(path, ZERO_CHANNEL)
            lines.append(f"{ch}: identically zero")
            continue
        tf, rep = fits[ch]
        atomic_write_text(path, dumps_coeffs(tf))
        ok &= rep.converged
        lines.append(f"{ch}: m={rep.m} n={rep.n} max_rel_error={rep.max_rel_error:.6e} "
                     f"converged={str(rep.converged).lower()}")
    report = "\n".join(lines) + "\n"
    atomic_write_text(cfg.out("fit_report.txt"), report)
    print(report, end="")
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _load_coeff_dir(path) -> dict:
    fits = {}
    for ch in CHANNELS:
        p = Path(path) / f"fit_{ch}.coef"
        if not p.exists():
            if ch in ("dd", "qq"):
                raise InputError(f"missing coefficient file {p}")
            fits[ch] = None
            continue
        text = p.read_text(encoding="utf-8")
        fits[ch] = None if text == ZERO_CHANNEL else loads_coeffs(text)
    return fits


def _wind_unit_fits(cfg: AnalysisConfig, plant):
    """Fitted single-unit inverter model from ``--wind-unit`` CSV or ``--coeffs`` directory."""
    if cfg.options.get("coeffs"):
        return _load_coeff_dir(cfg.options["coeffs"])
    if cfg.options.get("wind_unit"):
        rs = load_response_csv(cfg.options["wind_unit"])
        if rs.base != plant.wecs_base:
            if not cfg.rebase:
                raise BaseMismatch(f"wind measurement base {rs.base} differs from the plant's "
                                   f"unit base {plant.wecs_base} (use --rebase)")
            rs = rebase(rs, plant.wecs_base)
        fits = _fit_channels(rs, cfg.options.get("err_target", 1e-3), 8)
        return {ch: (None if v is None else v[0]) for ch, v in fits.items()}
    return None


def cmd_stability(cfg: AnalysisConfig) -> int:
    from .gnc import (assess_stability, dumps_bode_csv, dumps_loci_csv, minor_loop_gain,
                      qq_mitigation_check)
    from .plant import hvdc_response, pll_bandwidth_hz, vac_crossover_hz, wind_farm_response

    plant = _load_plant(cfg)
    grid = cfg.grid_or("0.1:5000:2000")
    fits = _wind_unit_fits(cfg, plant)
    z_unit = None if fits is None else _evaluate_fits(fits, grid)
    zh = hvdc_response(plant, grid)
    zw = wind_farm_response(plant, grid, z_unit=z_unit)
    try:
        rep = assess_stability(minor_loop_gain(zh, zw))
    except (ClosureViolation, PassesThroughMinusOne) as exc:
        print(f"error: {exc}", file=sys.stderr)
        atomic_write_text(cfg.out("gnc_report.txt"), f"verdict: UNDETERMINED\nreason: {exc}\n")
        return EXIT_PRECONDITION
    mit = qq_mitigation_check(grid, zh.channel("qq"), zw.channel("qq"),
                              pll_bandwidth_hz(plant), vac_crossover_hz(plant))
    hit = "none" if mit.qq_intersection_hz is None else f"{mit.qq_intersection_hz:.3f} Hz"
    text = (rep.summary()
            + f"qq magnitude intersection: {hit}\n"
            + f"pll bandwidth: {mit.pll_bandwidth_hz:.3f} Hz\n"
            + f"ac-voltage loop crossover: {mit.vac_crossover_hz:.3f} Hz\n"
            + f"bandwidth ratio: {mit.ratio:.3f} (10x rule "
            + ("satisfied" if mit.rule_10x_satisfied else "violated") + ")\n")
    atomic_write_text(cfg.out("gnc_report.txt"), text)
    atomic_write_text(cfg.out("loci.csv"), dumps_loci_csv(rep.loci))
    for name, rs in (("hvdc", zh), ("wind", zw)):
        for ch in ("dd", "qq"):
            atomic_write_text(cfg.out(f"bode_{name}_{ch}.csv"), dumps_bode_csv(grid, rs.channel(ch)))
    print(text, end="")
    return EXIT_OK if rep.stable else EXIT_UNSTABLE


def cmd_extract(cfg: AnalysisConfig) -> int:
    from .extraction import ExtractionProblem, SolverOptions, default_frequencies, dumps_report, extract_gains

    plant = _load_plant(cfg)
    fits = _wind_unit_fits(cfg, plant)
    if fits is None:
        raise InputError("extract needs --coeffs DIR or --wind-unit CSV")
    n = int(cfg.options.get("per_channel", 8))
    freqs = default_frequencies(fits["qq"], n)
    opts = SolverOptions(residual_tol=cfg.options.get("residual_tol", 1e-10))
    prob = ExtractionProblem(fits["dd"], fits["qq"], plant.wecs, plant.op, freqs, options=opts)
    res = extract_gains(prob)
    text = dumps_report(res)
    atomic_write_text(cfg.out("extraction_report.txt"), text)
    print(text, end="")
    print(f"PLL: bandwidth {res.pll_bandwidth_hz:.2f} Hz, crossover {res.pll_crossover_hz:.2f} Hz, "
          f"phase margin {res.pll_phase_margin_deg:.1f} deg")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_sweep(cfg: AnalysisConfig) -> int:
    import csv
    import io

    from .gnc import assess_stability, minor_loop_gain
    from .plant import SWEEPABLE, hvdc_response, state_space, wind_farm_response
    from .statespace import dumps_sweep_csv, sweep_gain

    name = cfg.options["param"]
    if name not in SWEEPABLE:
        raise InputError(f"unknown sweep parameter {name!r}; choose from {', '.join(SWEEPABLE)}")
    values = parse_range(cfg.options["range"])
    plant = _load_plant(cfg)
    try:
        plants = [plant.with_param(name, v) for v in values]
    except (DqStabError, ValueError) as exc:
        raise InputError(str(exc)) from None
    by_value = dict(zip(values.tolist(), plants))
    result = sweep_gain(lambda v: state_space(by_value[float(v)]), values)
    atomic_write_text(cfg.out("sweep.csv"), dumps_sweep_csv(result))

    grid = cfg.grid_or("0.1:5000:2000")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "max_real", "ss_stable", "gnc_stable", "gnc_encirclements"])
    for v, p, mr in zip(values, plants, result.max_real):
        try:
            rep = assess_stability(minor_loop_gain(hvdc_response(p, grid), wind_farm_response(p, grid)))
            gnc, enc = str(rep.stable).lower(), str(rep.total_encirclements)
        except (ClosureViolation, PassesThroughMinusOne):
            gnc, enc = "undetermined", ""
        w.writerow([repr(float(v)), repr(float(mr)), str(bool(mr < 0)).lower(), gnc, enc])
    atomic_write_text(cfg.out("sweep_verdicts.csv"), buf.getvalue())
    cross = "none" if result.crossing_value is None else f"{result.crossing_value:.6g}"
    print(f"{name}: {values.size} points, stability crossing at {cross}")
    return EXIT_OK


def cmd_synth(cfg: AnalysisConfig) -> int:
    from .plant import hvdc_response, wecs_unit_response, wind_farm_response

    plant = _load_plant(cfg)
    grid = cfg.grid_or(DEFAULT_GRID)
    what = cfg.options.get("what", "wecs")
    builders = {
        "wecs": lambda g: wecs_unit_response(plant, g, neglect_delay=False),
        "farm": lambda g: wind_farm_response(plant, g),
        "hvdc": lambda g: hvdc_response(plant, g),
    }
    clean = builders[what](grid)
    rs = synth_measurement(lambda f: clean.z, grid, cfg.options.get("noise", 0.0), cfg.seed,
                           base=clean.base, label=what)
    out = cfg.options.get("output") or str(cfg.out(f"synth_{what}.csv"))
    atomic_write_text(out, dumps_response_csv(rs))
    print(f"wrote {len(grid)} points to {out}")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "stability": cmd_stability, "extract": cmd_extract,
            "sweep": cmd_sweep, "synth": cmd_synth}


# -------------------------------------------------------------- arguments

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dqstab", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON file whose keys mirror the global flag names")
    ap.add_argument("--grid", help="frequency grid fmin:fmax:n (Hz, log-spaced)")
    ap.add_argument("--base-mva", type=float, help="analysis power base")
    ap.add_argument("--base-kv", type=float, help="analysis voltage base")
    ap.add_argument("--rebase", action="store_true", default=None,
                    help="convert inputs to the analysis base instead of refusing")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out-dir")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit rational models to a measurement CSV")
    p.add_argument("input")
    p.add_argument("--err-target", type=float, default=1e-3)
    p.add_argument("--max-order", type=int, default=8)

    p = sub.add_parser("stability", help="GNC assessment of the interconnection")
    p.add_argument("plant")
    p.add_argument("--wind-unit", help="single inverter measurement CSV (fitted before use)")
    p.add_argument("--coeffs", help="directory with fit_<ch>.coef files for the inverter")

    p = sub.add_parser("extract", help="recover inverter controller gains")
    p.add_argument("plant")
    p.add_argument("--wind-unit")
    p.add_argument("--coeffs")
    p.add_argument("--per-channel", type=int, default=8)
    p.add_argument("--residual-tol", type=float, default=1e-10)

    p = sub.add_parser("sweep", help="eigenvalue sweep of one parameter")
    p.add_argument("plant")
    p.add_argument("--param", required=True)
    p.add_argument("--range", required=True, help="start:stop[:n]")

    p = sub.add_parser("synth", help="write a synthetic impedance measurement")
    p.add_argument("plant")
    p.add_argument("--what", choices=("wecs", "farm", "hvdc"), default="wecs")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--output")
    return ap


def config_from_args(ns: argparse.Namespace) -> AnalysisConfig:
    values = {"rebase": False, "seed": 0, "out_dir": "."}
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {ns.config}: {exc}") from None
        unknown = set(data) - set(GLOBAL_KEYS)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(data)
    for key in GLOBAL_KEYS:
        v = getattr(ns, key)
        if v is not None:
            values[key] = v
    skip = set(GLOBAL_KEYS) | {"config", "command", "plant"}
    options = {k: v for k, v in vars(ns).items() if k not in skip}
    return AnalysisConfig(ns.command, getattr(ns, "plant", None), options=options, **values)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
        os.makedirs(cfg.out_dir, exist_ok=True)
        return COMMANDS[cfg.command](cfg)
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (DqStabError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
