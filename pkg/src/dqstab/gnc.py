"""Generalized Nyquist stability of the source/load interconnection.

The minor-loop gain ``L = Z_HVDC Z_W^-1`` is evaluated on a frequency grid,
its two eigenvalues are tracked as continuous loci and each locus is
closed with its complex-conjugate mirror (negative frequencies).  The
verdict assumes that ``L`` has no right-half-plane poles, i.e. that the
HVDC side is stable unloaded and the wind farm is stable on a stiff bus.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (BaseMismatch, ClosureViolation, GridMismatch, PassesThroughMinusOne,
                     Singularity)
from .freqdata import FrequencyGrid, FrequencyResponseSet, _fmt, make_log_grid

MINUS_ONE_TOL = 1e-9
COLLISION_TOL = 1e-9
OPEN_LOOP_NOTE = ("verdict assumes no right-half-plane poles in the minor-loop gain "
                  "(HVDC side stable unloaded, wind farm stable on a stiff bus)")


def default_analysis_grid() -> FrequencyGrid:
    return make_log_grid(0.1, 5000.0, 2000)


@dataclass(frozen=True, eq=False)
class MinorLoopGain:
    grid: FrequencyGrid
    matrices: np.ndarray  # (n, 2, 2)

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=complex)
        if m.shape != (len(self.grid), 2, 2):
            raise ValueError(f"expected ({len(self.grid)}, 2, 2) matrices, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("minor-loop gain has non-finite entries")
        m.setflags(write=False)
        object.__setattr__(self, "matrices", m)


@dataclass(frozen=True, eq=False)
class EigenLoci:
    grid: FrequencyGrid
    lambda1: np.ndarray
    lambda2: np.ndarray
    collisions: tuple = ()  # grid indices where the eigenvalues (nearly) coincide


@dataclass(frozen=True, eq=False)
class GNCReport:
    encirclements_1: int
    encirclements_2: int
    stable: bool
    critical_frequencies: list
    min_distance_to_minus_one: float
    margins_note: str
    loci: EigenLoci | None = field(default=None, repr=False)

    @property
    def total_encirclements(self) -> int:
        return self.encirclements_1 + self.encirclements_2

    def summary(self) -> str:
        verdict = "STABLE" if self.stable else "UNSTABLE"
        crit = ", ".join(f"{f:.3f} Hz" for f in self.critical_frequencies) or "none"
        return (f"verdict: {verdict}\n"
                f"encirclements of -1: locus1 {self.encirclements_1}, "
                f"locus2 {self.encirclements_2}\n"
                f"critical frequencies: {crit}\n"
                f"min distance to -1: {self.min_distance_to_minus_one:.6g}\n"
                f"note: {self.margins_note}\n")


@dataclass(frozen=True)
class MitigationReport:
    qq_intersection_hz: float | None
    pll_bandwidth_hz: float
    vac_crossover_hz: float
    ratio: float
    rule_10x_satisfied: bool
    intersection_below_pll_bw: bool


def minor_loop_gain(z_hvdc: FrequencyResponseSet, z_w: FrequencyResponseSet) -> MinorLoopGain:
    """``Z_HVDC Z_W^-1`` per grid point; both sets must share grid and base."""
    if z_hvdc.grid != z_w.grid:
        raise GridMismatch("HVDC and wind-farm responses are on different grids")
    if z_hvdc.base != z_w.base:
        raise BaseMismatch(f"bases differ: {z_hvdc.base} vs {z_w.base}")
    return minor_loop_gain_from_arrays(z_hvdc.grid, z_hvdc.z, z_w.z)


def minor_loop_gain_from_arrays(grid: FrequencyGrid, z_hvdc, z_w) -> MinorLoopGain:
    zh = np.asarray(z_hvdc, dtype=complex)
    zw = np.asarray(z_w, dtype=complex)
    det = zw[:, 0, 0] * zw[:, 1, 1] - zw[:, 0, 1] * zw[:, 1, 0]
    scale = np.max(np.abs(zw), axis=(1, 2))
    bad = np.abs(det) <= 1e-14 * np.maximum(scale, 1e-300) ** 2
    if np.any(bad):
        f = grid.points[np.argmax(bad)]
        raise Singularity(f"wind-farm impedance is singular at {f:.6g} Hz")
    inv = np.empty_like(zw)
    inv[:, 0, 0] = zw[:, 1, 1]
    inv[:, 1, 1] = zw[:, 0, 0]
    inv[:, 0, 1] = -zw[:, 0, 1]
    inv[:, 1, 0] = -zw[:, 1, 0]
    inv /= det[:, None, None]
    return MinorLoopGain(grid, zh @ inv)


def _eig2(m: np.ndarray):
    tr = m[:, 0, 0] + m[:, 1, 1]
    det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
    half = 0.5 * tr
    root = np.sqrt(half * half - det)
    a, b = half + root, half - root
    # the smaller root from the product avoids cancellation
    big = np.where(np.abs(a) >= np.abs(b), a, b)
    small = np.where(big != 0, det / np.where(big != 0, big, 1), 0)
    return big, small


def eigen_loci(mlg: MinorLoopGain) -> EigenLoci:
    """Closed-form 2x2 eigenvalues, consistently labelled across frequency.

    At each step the assignment with the smaller total jump is kept; ties
    keep the previous assignment.  Near-coincident eigenvalues are recorded
    and a warning is issued, since labelling there is ambiguous.
    """
    a, b = _eig2(mlg.matrices)
    n = a.size
    l1 = np.empty(n, dtype=complex)
    l2 = np.empty(n, dtype=complex)
    l1[0], l2[0] = a[0], b[0]
    for i in range(1, n):
        keep = abs(a[i] - l1[i - 1]) + abs(b[i] - l2[i - 1])
        swap = abs(b[i] - l1[i - 1]) + abs(a[i] - l2[i - 1])
        if swap < keep:
            l1[i], l2[i] = b[i], a[i]
        else:
            l1[i], l2[i] = a[i], b[i]
    gap = np.abs(l1 - l2)
    collisions = tuple(int(i) for i in np.nonzero(gap < COLLISION_TOL * np.maximum(1.0, np.abs(l1)))[0])
    if collisions:
        warnings.warn(f"eigen-loci collide at {len(collisions)} grid points; "
                      "locus labelling may be ambiguous there", RuntimeWarning)
    return EigenLoci(mlg.grid, l1, l2, collisions)


def count_encirclements(locus) -> int:
    """Signed winding number of the mirrored locus about -1 (counterclockwise > 0)."""
    lam = np.asarray(locus, dtype=complex).ravel()
    if lam.size < 2:
        raise ValueError("locus needs at least two points")
    c = lam + 1.0
    if np.min(np.abs(c)) < MINUS_ONE_TOL:
        raise PassesThroughMinusOne("locus passes through -1")
    if abs(lam[0]) >= 1 or abs(lam[-1]) >= 1:
        raise ClosureViolation(
            f"|lambda| must be < 1 at both grid ends (got {abs(lam[0]):.4g}, {abs(lam[-1]):.4g})")
    half = float(np.sum(np.angle(c[1:] / c[:-1])))
    # mirrored half traverses the same argument change; the two joins are short
    # chords inside the unit disc around lambda = 0
    join0 = 2.0 * float(np.angle(c[0]))
    join_inf = -2.0 * float(np.angle(c[-1]))
    turns = (2.0 * half + join0 + join_inf) / (2.0 * math.pi)
    return int(round(turns))


def half_contour_turns(locus) -> float:
    """``2 * (argument change of lambda + 1 over positive frequencies) / 2 pi``."""
    c = np.asarray(locus, dtype=complex).ravel() + 1.0
    return 2.0 * float(np.sum(np.angle(c[1:] / c[:-1]))) / (2.0 * math.pi)


def critical_frequencies(grid: FrequencyGrid, locus) -> list[float]:
    """Negative-real-axis crossings left of -1, linearly interpolated in frequency."""
    lam = np.asarray(locus, dtype=complex)
    f = grid.points
    im, re = lam.imag, lam.real
    out = []
    for i in range(lam.size - 1):
        if re[i] < -1 and re[i + 1] < -1 and (im[i] == 0 or im[i] * im[i + 1] < 0):
            if im[i] == 0:
                out.append(float(f[i]))
            else:
                out.append(float(f[i] + (f[i + 1] - f[i]) * im[i] / (im[i] - im[i + 1])))
    return out


def assess_stability(mlg: MinorLoopGain) -> GNCReport:
    loci = eigen_loci(mlg)
    n1 = count_encirclements(loci.lambda1)
    n2 = count_encirclements(loci.lambda2)
    crit = sorted(set(critical_frequencies(mlg.grid, loci.lambda1)
                      + critical_frequencies(mlg.grid, loci.lambda2)))
    dist = float(min(np.min(np.abs(loci.lambda1 + 1)), np.min(np.abs(loci.lambda2 + 1))))
    note = OPEN_LOOP_NOTE
    if loci.collisions:
        note += f"; eigen-loci collide at {len(loci.collisions)} points (labelling ambiguous)"
    return GNCReport(n1, n2, n1 == 0 and n2 == 0, crit, dist, note, loci)


def qq_mitigation_check(freqs, z_hvdc_qq, z_w_qq, pll_bw_hz: float,
                        vac_crossover_hz: float) -> MitigationReport:
    """Lowest frequency where ``|Z_HVDC,qq| >= |Z_W,qq|`` and the bandwidth-ratio rule."""
    f = freqs.points if isinstance(freqs, FrequencyGrid) else np.asarray(freqs, dtype=float)
    zh = np.abs(np.asarray(z_hvdc_qq, dtype=complex))
    zw = np.abs(np.asarray(z_w_qq, dtype=complex))
    if not (f.shape == zh.shape == zw.shape):
        raise GridMismatch("qq responses must share the frequency grid")
    diff = zh - zw
    hit = None
    above = np.nonzero(diff >= 0)[0]
    if above.size:
        j = int(above[0])
        if j == 0:
            hit = float(f[0])
        else:
            d0, d1 = diff[j - 1], diff[j]
            hit = float(f[j - 1] + (f[j] - f[j - 1]) * (-d0) / (d1 - d0))
    ratio = vac_crossover_hz / pll_bw_hz
    return MitigationReport(hit, float(pll_bw_hz), float(vac_crossover_hz), float(ratio),
                            bool(ratio >= 10), bool(hit is not None and hit <= pll_bw_hz))


def dumps_loci_csv(loci: EigenLoci) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["f_hz", "re_l1", "im_l1", "re_l2", "im_l2"])
    for f, a, b in zip(loci.grid.points, loci.lambda1, loci.lambda2):
        w.writerow([_fmt(f), _fmt(a.real), _fmt(a.imag), _fmt(b.real), _fmt(b.imag)])
    return buf.getvalue()


def dumps_bode_csv(freqs, values) -> str:
    f = freqs.points if isinstance(freqs, FrequencyGrid) else np.asarray(freqs, dtype=float)
    v = np.asarray(values, dtype=complex)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["f_hz", "mag_db", "phase_deg"])
    for fi, vi in zip(f, v):
        w.writerow([_fmt(fi), _fmt(20 * math.log10(abs(vi))), _fmt(math.degrees(np.angle(vi)))])
    return buf.getvalue()
