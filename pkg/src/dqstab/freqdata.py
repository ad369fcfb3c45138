"""dq-frame impedance frequency responses, per-unit bases and their CSV format.

Impedances are always stored in per-unit on the base attached to the set.
Frequencies are in Hz; angular frequency is formed where it is used.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidRange, InvariantViolation, ParseError

CSV_COLUMNS = (
    "f_hz",
    "re_zdd", "im_zdd",
    "re_zdq", "im_zdq",
    "re_zqd", "im_zqd",
    "re_zqq", "im_zqq",
)


@dataclass(frozen=True)
class PerUnitBase:
    s_base: float  # VA
    v_base: float  # V, line-to-line RMS
    f_base: float = 50.0  # Hz

    def __post_init__(self):
        for name in ("s_base", "v_base", "f_base"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvariantViolation(f"{name} must be finite and > 0, got {value!r}")

    @property
    def z_base(self) -> float:
        return self.v_base**2 / self.s_base

    @property
    def omega_base(self) -> float:
        return 2.0 * math.pi * self.f_base

    @property
    def mva(self) -> float:
        return self.s_base / 1e6

    @property
    def kv(self) -> float:
        return self.v_base / 1e3


# HVDC system base and single WECS unit base.
SYSTEM_BASE = PerUnitBase(500e6, 220e3, 50.0)
WECS_BASE = PerUnitBase(150e6, 575.0, 50.0)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Strictly increasing set of positive frequencies in Hz."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size == 0:
            raise InvariantViolation("frequency grid is empty")
        if not np.all(np.isfinite(pts)) or np.any(pts <= 0):
            raise InvariantViolation("frequencies must be finite and > 0")
        if pts.size > 1 and np.any(np.diff(pts) <= 0):
            raise InvariantViolation("frequencies must be strictly increasing without duplicates")
        object.__setattr__(self, "points", _readonly(pts))

    def __len__(self) -> int:
        return self.points.size

    def __iter__(self):
        return iter(self.points.tolist())

    def __eq__(self, other):
        return isinstance(other, FrequencyGrid) and np.array_equal(self.points, other.points)

    @property
    def omega(self) -> np.ndarray:
        return 2.0 * np.pi * self.points


def make_log_grid(f_min: float, f_max: float, n: int) -> FrequencyGrid:
    if not (0 < f_min < f_max) or not math.isfinite(f_max) or n < 2:
        raise InvalidRange(f"need 0 < f_min < f_max and n >= 2, got ({f_min}, {f_max}, {n})")
    pts = np.logspace(math.log10(f_min), math.log10(f_max), int(n))
    pts[0], pts[-1] = f_min, f_max
    return FrequencyGrid(pts)


@dataclass(frozen=True)
class ImpedanceSample:
    z_dd: complex
    z_dq: complex
    z_qd: complex
    z_qq: complex

    def __post_init__(self):
        if not all(np.isfinite(z) for z in (self.z_dd, self.z_dq, self.z_qd, self.z_qq)):
            raise InvariantViolation("impedance sample has non-finite entries")

    def matrix(self) -> np.ndarray:
        return np.array([[self.z_dd, self.z_dq], [self.z_qd, self.z_qq]], dtype=complex)


@dataclass(frozen=True, eq=False)
class FrequencyResponseSet:
    """One 2x2 complex dq impedance matrix per grid point.

    ``z`` has shape ``(len(grid), 2, 2)`` and is read-only.
    """

    base: PerUnitBase
    grid: FrequencyGrid
    z: np.ndarray
    label: str = ""

    def __post_init__(self):
        z = np.asarray(self.z, dtype=complex)
        if z.ndim != 3 or z.shape[1:] != (2, 2):
            raise InvariantViolation(f"impedance array must be (n, 2, 2), got {z.shape}")
        if z.shape[0] != len(self.grid):
            raise InvariantViolation(
                f"{z.shape[0]} samples for a grid of {len(self.grid)} points")
        if not np.all(np.isfinite(z)):
            raise InvariantViolation("impedance samples must be finite")
        if "\n" in self.label or "\r" in self.label:
            raise InvariantViolation("label must be a single line")
        object.__setattr__(self, "z", _readonly(z))

    @classmethod
    def from_samples(cls, base: PerUnitBase, grid: FrequencyGrid,
                     samples: Sequence[ImpedanceSample], label: str = ""):
        z = np.array([s.matrix() for s in samples], dtype=complex).reshape(-1, 2, 2)
        return cls(base, grid, z, label)

    @classmethod
    def from_diagonal(cls, base: PerUnitBase, grid: FrequencyGrid, z_dd, z_qq, label: str = ""):
        z = np.zeros((len(grid), 2, 2), dtype=complex)
        z[:, 0, 0] = z_dd
        z[:, 1, 1] = z_qq
        return cls(base, grid, z, label)

    def __len__(self) -> int:
        return len(self.grid)

    def __eq__(self, other):
        return (isinstance(other, FrequencyResponseSet)
                and self.base == other.base
                and self.grid == other.grid
                and self.label == other.label
                and np.array_equal(self.z, other.z))

    @property
    def samples(self) -> list[ImpedanceSample]:
        return [ImpedanceSample(*m.ravel().tolist()) for m in self.z]

    @property
    def frequencies(self) -> np.ndarray:
        return self.grid.points

    def channel(self, name: str) -> np.ndarray:
        i, j = {"dd": (0, 0), "dq": (0, 1), "qd": (1, 0), "qq": (1, 1)}[name]
        return self.z[:, i, j]


def rebase(rs: FrequencyResponseSet, new_base: PerUnitBase) -> FrequencyResponseSet:
    """Express the same physical impedances on ``new_base``."""
    if new_base == rs.base:
        return rs
    factor = rs.base.z_base / new_base.z_base
    return FrequencyResponseSet(new_base, rs.grid, rs.z * factor, rs.label)


def _fmt(x: float) -> str:
    # repr() is the shortest string that round-trips to the same double.
    text = repr(float(x))
    return text[:-2] if text.endswith(".0") else text


def format_header(base: PerUnitBase, label: str) -> str:
    return (f"# base_mva={_fmt(base.mva)},base_kv={_fmt(base.kv)},"
            f"f_base_hz={_fmt(base.f_base)},frame=dq,label={label}")


def parse_header(line: str) -> tuple[PerUnitBase, str]:
    if not line.startswith("#"):
        raise ParseError("missing '# base_mva=...' metadata line")
    body = line[1:].lstrip()
    head, sep, label = body.partition("label=")
    if not sep:
        raise ParseError("metadata line has no label= field")
    fields = {}
    for item in head.split(","):
        item = item.strip()
        if not item:
            continue
        key, eq, value = item.partition("=")
        if not eq:
            raise ParseError(f"bad metadata item {item!r}")
        fields[key.strip()] = value.strip()
    try:
        mva = _parse_float(fields["base_mva"])
        kv = _parse_float(fields["base_kv"])
        fb = _parse_float(fields["f_base_hz"])
    except KeyError as exc:
        raise ParseError(f"metadata missing {exc.args[0]}") from None
    if fields.get("frame", "dq") != "dq":
        raise ParseError(f"unsupported frame {fields['frame']!r}")
    try:
        base = PerUnitBase(mva * 1e6, kv * 1e3, fb)
    except InvariantViolation as exc:
        raise ParseError(str(exc)) from None
    return base, label


def _parse_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value: {text!r}")
    return value


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and a rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_response_csv(rs: FrequencyResponseSet) -> str:
    buf = io.StringIO()
    buf.write(format_header(rs.base, rs.label) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for f, m in zip(rs.grid.points, rs.z):
        row = [_fmt(f)]
        for v in (m[0, 0], m[0, 1], m[1, 0], m[1, 1]):
            row += [_fmt(v.real), _fmt(v.imag)]
        writer.writerow(row)
    return buf.getvalue()


def save_response_csv(rs: FrequencyResponseSet, path) -> None:
    atomic_write_text(path, dumps_response_csv(rs))


def loads_response_csv(text: str) -> FrequencyResponseSet:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file")
    base, label = parse_header(lines[0])
    reader = csv.reader(lines[1:])
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("missing column header line") from None
    if tuple(h.strip() for h in header) != CSV_COLUMNS:
        raise ParseError(f"unexpected column header {header!r}")
    freqs, mats = [], []
    for lineno, row in enumerate(reader, start=3):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_COLUMNS):
            raise ParseError(f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        try:
            vals = [_parse_float(c) for c in row]
        except ParseError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        freqs.append(vals[0])
        mats.append([complex(vals[1], vals[2]), complex(vals[3], vals[4]),
                     complex(vals[5], vals[6]), complex(vals[7], vals[8])])
    if not freqs:
        raise InvariantViolation("no data rows")
    freqs = np.array(freqs)
    order = np.argsort(freqs, kind="stable")
    z = np.array(mats, dtype=complex).reshape(-1, 2, 2)[order]
    return FrequencyResponseSet(base, FrequencyGrid(freqs[order]), z, label)


def load_response_csv(path) -> FrequencyResponseSet:
    with open(path, encoding="utf-8", newline="") as fh:
        return loads_response_csv(fh.read())


def response_from_function(func, grid: FrequencyGrid, base: PerUnitBase,
                           label: str = "") -> FrequencyResponseSet:
    """Evaluate ``func(f) -> 2x2`` at every grid point."""
    z = np.array([np.asarray(func(f), dtype=complex) for f in grid.points])
    return FrequencyResponseSet(base, grid, z, label)


__all__ = [
    "PerUnitBase", "FrequencyGrid", "ImpedanceSample", "FrequencyResponseSet",
    "SYSTEM_BASE", "WECS_BASE", "make_log_grid", "load_response_csv", "save_response_csv",
    "loads_response_csv", "dumps_response_csv", "rebase", "atomic_write_text",
    "response_from_function",
]
