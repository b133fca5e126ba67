"""Functions on the circle sampled on a periodic grid.

A :class:`CircleFunction` stores samples of ``f: T -> R`` (index 0, periodic)
or of a lift ``f(theta + 1) = f(theta) + 1`` (index 1, a circle map).  Values
are stored lifted; the spline always interpolates the periodic part
``f - index * id``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import signal

from ._spline import PeriodicSpline, check_knots, is_uniform
from .errors import (
    DivisionDegeneracy,
    DomainError,
    GridMismatch,
    InversionFailure,
    InvalidRepresentation,
    MonotonicityError,
)

__all__ = [
    "CircleFunction",
    "uniform_knots",
    "eval",
    "derivative",
    "compose",
    "invert_graph",
    "invert_refine_left",
    "invert_refine_right",
    "invert_refine_coho",
    "best_inverse",
    "inverse_residual",
    "resample",
    "lowpass",
    "spectral_tail",
    "refine_knots",
    "cr_norm",
    "write_csv",
    "read_csv",
]


def uniform_knots(n: int) -> np.ndarray:
    return np.arange(n, dtype=float) / n


def same_grid(k1: np.ndarray, k2: np.ndarray) -> bool:
    return k1 is k2 or (k1.shape == k2.shape and np.array_equal(k1, k2))


@dataclass(frozen=True, eq=False)
class CircleFunction:
    knots: np.ndarray
    values: np.ndarray
    index: int = 0
    spline_order: int = 3

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        check_knots(knots, self.spline_order)
        if values.shape != knots.shape:
            raise InvalidRepresentation(
                f"values shape {values.shape} does not match knots {knots.shape}"
            )
        if self.index not in (0, 1):
            raise InvalidRepresentation(f"index must be 0 or 1, got {self.index}")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    # constructors

    @classmethod
    def from_callable(
        cls,
        func: Callable[[np.ndarray], np.ndarray],
        n: int | np.ndarray,
        index: int = 0,
        spline_order: int = 3,
    ) -> "CircleFunction":
        knots = uniform_knots(n) if np.isscalar(n) else np.asarray(n, dtype=float)
        vals = np.broadcast_to(np.asarray(func(knots), dtype=float), knots.shape).copy()
        return cls(knots, vals, index, spline_order)

    @classmethod
    def constant(cls, c: float, knots, spline_order: int = 3) -> "CircleFunction":
        knots = uniform_knots(knots) if np.isscalar(knots) else np.asarray(knots, float)
        return cls(knots, np.full(knots.shape, float(c)), 0, spline_order)

    @classmethod
    def identity(cls, knots, spline_order: int = 3) -> "CircleFunction":
        knots = uniform_knots(knots) if np.isscalar(knots) else np.asarray(knots, float)
        return cls(knots, knots.copy(), 1, spline_order)

    @classmethod
    def rotation(cls, omega: float, knots, spline_order: int = 3) -> "CircleFunction":
        knots = uniform_knots(knots) if np.isscalar(knots) else np.asarray(knots, float)
        return cls(knots, knots + omega, 1, spline_order)

    # representation helpers

    @property
    def n(self) -> int:
        return self.knots.size

    @property
    def periodic_part(self) -> np.ndarray:
        return self.values - self.index * self.knots

    @property
    def is_uniform(self) -> bool:
        return is_uniform(self.knots)

    @cached_property
    def spline(self) -> PeriodicSpline:
        return PeriodicSpline(self.knots, self.periodic_part, self.spline_order)

    def with_values(self, values: np.ndarray, index: Optional[int] = None) -> "CircleFunction":
        return CircleFunction(
            self.knots, values, self.index if index is None else index, self.spline_order
        )

    def with_order(self, spline_order: int) -> "CircleFunction":
        return CircleFunction(self.knots, self.values, self.index, spline_order)

    def __call__(self, theta, nu: int = 0):
        return eval(self, theta, nu)

    def __repr__(self) -> str:
        return (
            f"CircleFunction(n={self.n}, index={self.index}, "
            f"spline_order={self.spline_order}, uniform={self.is_uniform})"
        )

    # arithmetic on a common grid

    def _other_values(self, other):
        if isinstance(other, CircleFunction):
            if not same_grid(self.knots, other.knots):
                raise GridMismatch("circle functions live on different grids")
            return other.values, other.index
        return float(other), 0

    def __add__(self, other):
        v, i = self._other_values(other)
        return self.with_values(self.values + v, self.index + i)

    __radd__ = __add__

    def __sub__(self, other):
        v, i = self._other_values(other)
        return self.with_values(self.values - v, self.index - i)

    def __rsub__(self, other):
        v, i = self._other_values(other)
        return self.with_values(v - self.values, i - self.index)

    def __neg__(self):
        if self.index:
            raise DomainError("negating an index-1 function leaves the supported indices")
        return self.with_values(-self.values)

    def __mul__(self, other):
        v, i = self._other_values(other)
        if self.index or i:
            raise DomainError("products are only defined for index-0 functions")
        return self.with_values(self.values * v)

    __rmul__ = __mul__

    def __truediv__(self, other):
        v, i = self._other_values(other)
        if self.index or i:
            raise DomainError("quotients are only defined for index-0 functions")
        return self.with_values(self.values / v)

    def __rtruediv__(self, other):
        v, i = self._other_values(other)
        if self.index or i:
            raise DomainError("quotients are only defined for index-0 functions")
        return self.with_values(v / self.values)

    def __pow__(self, p):
        if self.index:
            raise DomainError("powers are only defined for index-0 functions")
        return self.with_values(self.values**p)


def eval(f: CircleFunction, theta, nu: int = 0):
    """Spline value (or ``nu``-th derivative) of ``f`` at arbitrary reals."""
    theta = np.asarray(theta, dtype=float)
    out = f.spline(theta, nu)
    if f.index:
        if nu == 0:
            out = out + f.index * theta
        elif nu == 1:
            out = out + f.index
    if out.ndim == 0:
        return float(out)
    return out


def derivative(f: CircleFunction, nu: int = 1) -> CircleFunction:
    """Samples of the spline derivative on the same knots; always index 0."""
    vals = np.asarray(f.spline(f.knots, nu), dtype=float)
    if nu == 1:
        vals = vals + f.index
    return CircleFunction(f.knots, vals, 0, f.spline_order)


def compose(f: CircleFunction, g: CircleFunction) -> CircleFunction:
    """``f o g`` sampled on the knots of ``g``; ``g`` must be a circle map."""
    if g.index != 1:
        raise DomainError("the inner function of a composition must have index 1")
    vals = f.spline(g.values) + f.index * g.values
    return CircleFunction(g.knots, vals, f.index, g.spline_order)


def _check_monotone(a: CircleFunction) -> None:
    if a.index != 1:
        raise DomainError("inversion needs an index-1 circle map")
    d = np.diff(np.append(a.values, a.values[0] + 1.0))
    if np.any(d <= 0.0):
        raise MonotonicityError("circle map is not strictly increasing on its samples")


def invert_graph(a: CircleFunction) -> CircleFunction:
    """Inverse by reflecting the graph through the diagonal.

    The samples ``(knots[i], a(knots[i]))`` are read as ``(a^-1 knots, knots)``:
    the reflected points become the knots of an auxiliary spline that is then
    evaluated back on the original grid.
    """
    _check_monotone(a)
    x = a.values
    p = a.knots - x  # periodic part of a^-1 at the points x
    xm = x - np.floor(x)
    order = np.argsort(xm, kind="stable")
    xm = xm[order]
    p = p[order]
    if np.any(np.diff(xm) <= 0.0):
        raise MonotonicityError("reflected knots collide; grid too coarse for this map")
    spline_order = a.spline_order
    if xm.size < 4 and spline_order == 3:
        spline_order = 1
    refl = PeriodicSpline(xm, p, spline_order)
    vals = a.knots + refl(a.knots)
    return CircleFunction(a.knots, vals, 1, a.spline_order)


def _id_residual(f: CircleFunction) -> np.ndarray:
    return f.values - f.knots


def invert_refine_left(ainv: CircleFunction, aplus: CircleFunction) -> CircleFunction:
    """One step on ``(ainv + d) o aplus = id``: ``d = -e o ainv``."""
    e = compose(ainv, aplus) - CircleFunction.identity(aplus.knots, aplus.spline_order)
    e = CircleFunction(aplus.knots, e.values, 0, aplus.spline_order)
    delta = compose(e, ainv)
    return ainv.with_values(ainv.values - delta.values)


def invert_refine_right(ainv: CircleFunction, aplus: CircleFunction) -> CircleFunction:
    """One step on ``aplus o (ainv + d) = id``: ``d = (id - aplus o ainv) / Daplus o ainv``."""
    comp = aplus.spline(ainv.values) + ainv.values
    slope = aplus.spline(ainv.values, 1) + 1.0
    if np.any(np.abs(slope) < 1e-300) or not np.all(np.isfinite(slope)):
        raise DivisionDegeneracy("Da+ vanishes at some sample of the inverse")
    delta = (ainv.knots - comp) / slope
    return ainv.with_values(ainv.values + delta)


def method4_beta(ainv: CircleFunction, aplus: CircleFunction) -> int:
    slope = aplus.spline(ainv.values, 1) + 1.0
    return int(math.ceil(float(np.max(np.abs(1.0 / slope))) - 1e-12))


def invert_refine_coho(
    ainv: CircleFunction, aplus: CircleFunction, coho_solver=None, tolerance: float = 1e-15
) -> CircleFunction:
    """Combined left/right refinement solved as a cohomological equation.

    Linearizing ``(ainv + d) o a+ - beta a+ o (ainv + d) + (beta - 1) id = 0``
    gives ``d = l * d o a+ + eta`` with ``l = 1 / (beta Da+ o ainv)``.
    """
    from .cohomology import CohoProblem, solve_coho

    solver = coho_solver or solve_coho
    slope = aplus.spline(ainv.values, 1) + 1.0
    if np.any(np.abs(slope) < 1e-300):
        raise DivisionDegeneracy("Da+ vanishes at some sample of the inverse")
    beta = method4_beta(ainv, aplus)
    left = compose(ainv, aplus).values
    right = aplus.spline(ainv.values) + ainv.values
    resid = left - beta * right + (beta - 1.0) * ainv.knots
    denom = beta * slope
    knots, order = aplus.knots, aplus.spline_order
    l = CircleFunction(knots, 1.0 / denom, 0, order)
    eta = CircleFunction(knots, resid / denom, 0, order)
    scale = float(np.max(np.abs(eta.values)))
    prob = CohoProblem(l, aplus, eta, tolerance=max(tolerance, 1e-14 * scale))
    delta = solver(prob)
    return ainv.with_values(ainv.values + delta.values)


def inverse_residual(a: CircleFunction, c: CircleFunction) -> float:
    """max(|a o c - id|, |c o a - id|) in C0 on the knots."""
    r1 = np.max(np.abs(_id_residual(compose(a, c))))
    r2 = np.max(np.abs(_id_residual(compose(c, a))))
    return float(max(r1, r2))


def best_inverse(
    a: CircleFunction, prev: Optional[CircleFunction] = None, return_method: bool = False
):
    """Try every inversion method, keep the one with the smallest two-sided residual."""
    candidates = []
    try:
        candidates.append((1, invert_graph(a)))
    except (MonotonicityError, InvalidRepresentation):
        pass
    if prev is not None:
        for method, fn in (
            (2, invert_refine_left),
            (3, invert_refine_right),
            (4, invert_refine_coho),
        ):
            try:
                candidates.append((method, fn(prev, a)))
            except Exception:  # each refinement may legitimately fail; others remain
                continue
    best = None
    for method, c in candidates:
        if not np.all(np.isfinite(c.values)):
            continue
        if np.any(np.diff(np.append(c.values, c.values[0] + 1.0)) <= 0.0):
            continue
        r = inverse_residual(a, c)
        if best is None or r < best[0]:
            best = (r, method, c)
    if best is None:
        raise InversionFailure("no inversion method produced a monotone inverse")
    if return_method:
        return best[2], best[1], best[0]
    return best[2]


def resample_periodic(knots: np.ndarray, periodic, new_knots: np.ndarray, order: int) -> np.ndarray:
    """Move periodic samples (last axis) to ``new_knots``.

    Between uniform grids the trigonometric interpolant is used: it adds no
    content above the old Nyquist frequency, whereas spline interpolation
    leaves components at the old knot frequency that the Newton iteration does
    not remove.  Otherwise the spline is evaluated.
    """
    if is_uniform(knots) and is_uniform(new_knots):
        return signal.resample(periodic, new_knots.size, axis=-1)
    return PeriodicSpline(knots, periodic, order)(new_knots)


def lowpass_periodic(periodic, fraction: float) -> np.ndarray:
    """Zero every Fourier mode at or above ``fraction * N`` (last axis, uniform grid)."""
    n = periodic.shape[-1]
    coef = np.fft.rfft(periodic, axis=-1)
    coef[..., max(1, int(fraction * n)) :] = 0.0
    return np.fft.irfft(coef, n, axis=-1)


def lowpass(f: CircleFunction, fraction: float) -> CircleFunction:
    """Band-limit the periodic part of ``f`` on a uniform grid."""
    if not is_uniform(f.knots):
        raise InvalidRepresentation("spectral filtering needs a uniform grid")
    return f.with_values(lowpass_periodic(f.periodic_part, fraction) + f.index * f.knots)


def spectral_tail(f_periodic: np.ndarray, lo: float = 1.0 / 16, hi: float = 1.0 / 8) -> float:
    """Largest Fourier amplitude with mode number in ``[lo N, hi N)``."""
    n = f_periodic.shape[-1]
    c = np.abs(np.fft.rfft(f_periodic, axis=-1)) / n
    return float(np.max(c[..., int(lo * n) : max(int(hi * n), int(lo * n) + 1)]))


def resample(f: CircleFunction, new_knots) -> CircleFunction:
    """Put ``f`` on a new knot vector (grid doubling, adaptive refinement)."""
    new_knots = uniform_knots(new_knots) if np.isscalar(new_knots) else np.asarray(new_knots, float)
    vals = resample_periodic(f.knots, f.periodic_part, new_knots, f.spline_order) + f.index * new_knots
    return CircleFunction(new_knots, vals, f.index, f.spline_order)


def refine_knots(f: CircleFunction, quantile: float = 0.9) -> np.ndarray:
    """Insert midpoints in cells whose second difference exceeds a quantile.

    Returns the refined knot vector; apply it with :func:`resample`.
    """
    p = f.periodic_part
    d2 = np.abs(np.roll(p, -1) - 2.0 * p + np.roll(p, 1))
    thresh = np.quantile(d2, quantile)
    flagged = d2 > thresh
    if not np.any(flagged):
        return f.knots.copy()
    nxt = np.append(f.knots[1:], f.knots[0] + 1.0)
    mids = 0.5 * (f.knots + nxt)
    # refine on both sides of a flagged knot
    cells = flagged | np.roll(flagged, -1)
    new = np.concatenate([f.knots, mids[cells] % 1.0])
    return np.unique(new)


def cr_norm(f: CircleFunction, r: int = 0) -> float:
    """Sum of sup-norms over knots of the derivatives of order 0..r."""
    if r < 0 or r > 3:
        raise ValueError("r must be in 0..3")
    total = float(np.max(np.abs(f.values)))
    for nu in range(1, r + 1):
        d = np.asarray(f.spline(f.knots, nu))
        if nu == 1:
            d = d + f.index
        total += float(np.max(np.abs(d)))
    return total


def write_csv(f: CircleFunction, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# index={f.index}\n# spline_order={f.spline_order}\n")
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["knot", "value"])
        for k, v in zip(f.knots, f.values):
            w.writerow([repr(float(k)), repr(float(v))])


def _read_meta_csv(path):
    meta = {}
    rows = []
    with Path(path).open(newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
            else:
                lines.append(line)
    reader = csv.reader(lines)
    header = next(reader)
    for row in reader:
        if row:
            rows.append([float(x) for x in row])
    return meta, header, np.array(rows, dtype=float)


def read_csv(path) -> CircleFunction:
    meta, header, data = _read_meta_csv(path)
    if header[:2] != ["knot", "value"]:
        raise InvalidRepresentation(f"unexpected header {header}")
    return CircleFunction(
        data[:, 0].copy(), data[:, 1].copy(), int(meta.get("index", 0)), int(meta.get("spline_order", 3))
    )
