"""Truncated Taylor series in one or two normal variables with circle coefficients.

A :class:`TaylorField` represents ``u(theta, s) = sum_j u_j(theta) (b s)^j`` in
the 2-D setting, or ``sum_{x,y} u_{x,y}(theta) (b s1)^x (b s2)^y`` in 3-D.  The
coefficients are stored as one array of shape ``orders_shape + (N,)`` so that
spline work on all coefficients is a single batched operation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np

from ._spline import PeriodicSpline, check_knots
from .circlefn import CircleFunction, _read_meta_csv, resample_periodic, same_grid
from .errors import DomainError, GridMismatch, InvalidRepresentation

__all__ = [
    "TaylorField",
    "field_add",
    "field_sub",
    "field_mul",
    "compose_left_sin",
    "compose_right",
    "xr_delta_norm",
    "rescale_s",
    "field_eval",
    "write_field_csv",
    "read_field_csv",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class TaylorField:
    """Coefficient stack of a truncated series.

    Parameters
    ----------
    knots : ndarray (N,)
        Shared knot grid.
    coeffs : ndarray
        ``(L+1, N)`` for one normal variable or ``(L1+1, L2+1, N)`` for two.
        The constant coefficient is stored lifted when ``index == 1``.
    index : int
        Winding index of the constant coefficient.
    spline_order : int
    scale : float
        The series variable is ``scale * s``.
    """

    knots: np.ndarray
    coeffs: np.ndarray
    index: int = 0
    spline_order: int = 3
    scale: float = 1.0

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        coeffs = np.asarray(self.coeffs, dtype=float)
        check_knots(knots, self.spline_order)
        if coeffs.ndim not in (2, 3) or coeffs.shape[-1] != knots.size:
            raise InvalidRepresentation(
                f"coefficient array shape {coeffs.shape} incompatible with {knots.size} knots"
            )
        if self.index not in (0, 1):
            raise InvalidRepresentation("index must be 0 or 1")
        if not self.scale > 0.0:
            raise InvalidRepresentation("scale must be positive")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "scale", float(self.scale))

    # constructors

    @classmethod
    def zeros(cls, knots, orders, index=0, spline_order=3, scale=1.0) -> "TaylorField":
        orders = (orders,) if np.isscalar(orders) else tuple(orders)
        knots = np.asarray(knots, dtype=float)
        coeffs = np.zeros(tuple(o + 1 for o in orders) + (knots.size,))
        if index:
            coeffs[(0,) * len(orders)] = knots
        return cls(knots, coeffs, index, spline_order, scale)

    @classmethod
    def from_circle(cls, f: CircleFunction, orders, scale=1.0) -> "TaylorField":
        u = cls.zeros(f.knots, orders, 0, f.spline_order, scale)
        c = u.coeffs.copy()
        c[(0,) * u.nvars] = f.values
        return cls(f.knots, c, f.index, f.spline_order, scale)

    # shape helpers

    @property
    def nvars(self) -> int:
        return self.coeffs.ndim - 1

    @property
    def orders(self) -> tuple:
        return tuple(n - 1 for n in self.coeffs.shape[:-1])

    @property
    def L(self):
        o = self.orders
        return o[0] if len(o) == 1 else o

    @property
    def n(self) -> int:
        return self.knots.size

    @property
    def zero_index(self) -> tuple:
        return (0,) * self.nvars

    def coeff(self, *j) -> CircleFunction:
        idx = tuple(j) if j else self.zero_index
        index = self.index if idx == self.zero_index else 0
        return CircleFunction(self.knots, self.coeffs[idx], index, self.spline_order)

    def __getitem__(self, j) -> CircleFunction:
        return self.coeff(*(j if isinstance(j, tuple) else (j,)))

    @property
    def periodic_coeffs(self) -> np.ndarray:
        if not self.index:
            return self.coeffs
        c = self.coeffs.copy()
        c[self.zero_index] -= self.knots
        return c

    @cached_property
    def spline(self) -> PeriodicSpline:
        return PeriodicSpline(self.knots, self.periodic_coeffs, self.spline_order)

    def replace(self, coeffs=None, index=None, spline_order=None, scale=None) -> "TaylorField":
        return TaylorField(
            self.knots,
            self.coeffs if coeffs is None else coeffs,
            self.index if index is None else index,
            self.spline_order if spline_order is None else spline_order,
            self.scale if scale is None else scale,
        )

    def truncate(self, orders) -> "TaylorField":
        orders = (orders,) if np.isscalar(orders) else tuple(orders)
        sl = tuple(slice(0, o + 1) for o in orders)
        return self.replace(coeffs=self.coeffs[sl].copy())

    def extend(self, orders) -> "TaylorField":
        """Pad with zero coefficients up to ``orders`` (never truncates)."""
        orders = (orders,) if np.isscalar(orders) else tuple(orders)
        shape = tuple(max(o + 1, s) for o, s in zip(orders, self.coeffs.shape[:-1]))
        c = np.zeros(shape + (self.n,))
        c[tuple(slice(0, s) for s in self.coeffs.shape[:-1])] = self.coeffs
        return self.replace(coeffs=c)

    def total_degree(self) -> np.ndarray:
        """Array of total degrees matching ``orders_shape``."""
        grids = np.meshgrid(*[np.arange(o + 1) for o in self.orders], indexing="ij")
        return sum(grids)

    def __repr__(self) -> str:
        return (
            f"TaylorField(n={self.n}, orders={self.orders}, index={self.index}, "
            f"spline_order={self.spline_order}, scale={self.scale})"
        )

    # operators delegate to the module functions

    def __add__(self, other):
        return field_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return field_sub(self, other)

    def __rsub__(self, other):
        return field_sub(self, other).__neg__()

    def __neg__(self):
        if self.index:
            raise DomainError("negating an index-1 field leaves the supported indices")
        return self.replace(coeffs=-self.coeffs)

    def __mul__(self, other):
        return field_mul(self, other)

    __rmul__ = __mul__


FieldLike = Union[TaylorField, CircleFunction, float, np.ndarray]


def _common(u: TaylorField, v: TaylorField):
    if not same_grid(u.knots, v.knots):
        raise GridMismatch("fields live on different grids")
    if u.nvars != v.nvars:
        raise GridMismatch("fields have different numbers of normal variables")
    if u.scale != v.scale:
        raise GridMismatch("fields use different scale factors")
    orders = tuple(min(a, b) for a, b in zip(u.orders, v.orders))
    sl = tuple(slice(0, o + 1) for o in orders)
    return u.coeffs[sl], v.coeffs[sl]


def field_add(u: TaylorField, v: FieldLike) -> TaylorField:
    if isinstance(v, TaylorField):
        a, b = _common(u, v)
        return u.replace(coeffs=a + b, index=u.index + v.index)
    c = u.coeffs.copy()
    if isinstance(v, CircleFunction):
        if not same_grid(u.knots, v.knots):
            raise GridMismatch("field and circle function live on different grids")
        c[u.zero_index] += v.values
        return u.replace(coeffs=c, index=u.index + v.index)
    c[u.zero_index] += v
    return u.replace(coeffs=c)


def field_sub(u: TaylorField, v: FieldLike) -> TaylorField:
    if isinstance(v, TaylorField):
        a, b = _common(u, v)
        return u.replace(coeffs=a - b, index=u.index - v.index)
    c = u.coeffs.copy()
    if isinstance(v, CircleFunction):
        if not same_grid(u.knots, v.knots):
            raise GridMismatch("field and circle function live on different grids")
        c[u.zero_index] -= v.values
        return u.replace(coeffs=c, index=u.index - v.index)
    c[u.zero_index] -= v
    return u.replace(coeffs=c)


def cauchy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Truncated Cauchy product of two coefficient stacks of equal shape."""
    out = np.zeros_like(a)
    if a.ndim == 2:
        n = a.shape[0]
        for i in range(n):
            out[i:] += a[i] * b[: n - i]
        return out
    n1, n2 = a.shape[:2]
    for i in range(n1):
        for m in range(n2):
            out[i:, m:] += a[i, m] * b[: n1 - i, : n2 - m]
    return out


def field_mul(u: TaylorField, v: FieldLike) -> TaylorField:
    """Truncated product; only index-0 factors may be non-scalar."""
    if isinstance(v, TaylorField):
        if u.index or v.index:
            raise DomainError("products are defined for index-0 fields only")
        a, b = _common(u, v)
        return u.replace(coeffs=cauchy(a, b))
    if isinstance(v, CircleFunction):
        if u.index or v.index:
            raise DomainError("products are defined for index-0 fields only")
        if not same_grid(u.knots, v.knots):
            raise GridMismatch("field and circle function live on different grids")
        return u.replace(coeffs=u.coeffs * v.values)
    v = np.asarray(v, dtype=float)
    if u.index and not (v.ndim == 0 and v == 1.0):
        raise DomainError("scaling an index-1 field changes its winding")
    return u.replace(coeffs=u.coeffs * v)


def sin_cos_coeffs(v: np.ndarray):
    """Coefficients of sin(v) and cos(v) for a series ``v`` (any number of variables).

    Uses the Euler-operator recurrence: with ``E`` the total-degree operator,
    ``E sin(v) = cos(v) E v`` and ``E cos(v) = -sin(v) E v``.
    """
    S = np.zeros_like(v)
    C = np.zeros_like(v)
    if v.ndim == 2:
        S[0] = np.sin(v[0])
        C[0] = np.cos(v[0])
        n = v.shape[0]
        for j in range(1, n):
            w = np.arange(j, 0, -1)[:, None] * v[j:0:-1]  # (j - k) v_{j-k}, k = 0..j-1
            S[j] = np.sum(w * C[:j], axis=0) / j
            C[j] = -np.sum(w * S[:j], axis=0) / j
        return S, C
    n1, n2 = v.shape[:2]
    S[0, 0] = np.sin(v[0, 0])
    C[0, 0] = np.cos(v[0, 0])
    for deg in range(1, n1 + n2 - 1):
        for x in range(max(0, deg - n2 + 1), min(deg, n1 - 1) + 1):
            y = deg - x
            accS = np.zeros(v.shape[-1])
            accC = np.zeros(v.shape[-1])
            for i in range(x + 1):
                for m in range(y + 1):
                    if i == 0 and m == 0:
                        continue
                    w = (i + m) * v[i, m]
                    accS += w * C[x - i, y - m]
                    accC -= w * S[x - i, y - m]
            S[x, y] = accS / deg
            C[x, y] = accC / deg
    return S, C


def compose_left_sin(u: TaylorField, two_pi: bool = True):
    """Return the series of ``sin(2 pi u)`` and ``cos(2 pi u)`` (or of ``sin(u)``, ``cos(u)``)."""
    v = u.coeffs * (TWO_PI if two_pi else 1.0)
    S, C = sin_cos_coeffs(v)
    return u.replace(coeffs=S, index=0), u.replace(coeffs=C, index=0)


def compose_right(u: TaylorField, a: CircleFunction, lam) -> TaylorField:
    """``u(a(theta), lam(theta) s)``; ``lam`` is a circle function or a pair of them."""
    if a.index != 1:
        raise DomainError("right composition needs an index-1 circle map")
    if not same_grid(u.knots, a.knots):
        raise GridMismatch("field and map live on different grids")
    vals = u.spline(a.values)
    if u.index:
        vals[u.zero_index] += a.values
    if u.nvars == 1:
        lv = lam.values if isinstance(lam, CircleFunction) else np.full(u.n, float(lam))
        powers = np.cumprod(np.vstack([np.ones(u.n), np.broadcast_to(lv, (u.orders[0], u.n))]), axis=0)
        return u.replace(coeffs=vals * powers)
    l1, l2 = lam
    l1 = l1.values if isinstance(l1, CircleFunction) else np.full(u.n, float(l1))
    l2 = l2.values if isinstance(l2, CircleFunction) else np.full(u.n, float(l2))
    n1, n2 = u.coeffs.shape[:2]
    p1 = np.cumprod(np.vstack([np.ones(u.n), np.broadcast_to(l1, (n1 - 1, u.n))]), axis=0)
    p2 = np.cumprod(np.vstack([np.ones(u.n), np.broadcast_to(l2, (n2 - 1, u.n))]), axis=0)
    return u.replace(coeffs=vals * p1[:, None, :] * p2[None, :, :])


def d_theta(u: TaylorField) -> TaylorField:
    """Angle derivative, coefficient by coefficient through the spline."""
    d = u.spline(u.knots, 1)
    if u.index:
        d[u.zero_index] += 1.0
    return u.replace(coeffs=d, index=0)


def d_s(u: TaylorField, var: int = 0) -> TaylorField:
    """Derivative in the (scaled) normal variable ``var``; the top order becomes zero."""
    c = np.zeros_like(u.coeffs)
    n = u.coeffs.shape[var]
    j = np.arange(1, n, dtype=float)
    if var == 0:
        c[: n - 1] = u.coeffs[1:] * j.reshape((-1,) + (1,) * u.nvars)
    else:
        c[:, : n - 1] = u.coeffs[:, 1:] * j.reshape((1, -1, 1))
    return u.replace(coeffs=c, index=0)


def coeff_cr_norms(u: TaylorField, r: int) -> np.ndarray:
    """C^r norm of every coefficient, shape ``orders_shape``."""
    axes = -1
    total = np.max(np.abs(u.coeffs), axis=axes)
    for nu in range(1, r + 1):
        d = u.spline(u.knots, nu)
        if nu == 1 and u.index:
            d[u.zero_index] += 1.0
        total = total + np.max(np.abs(d), axis=axes)
    return total


def xr_delta_norm(u: TaylorField, r: int = 0, delta: float = 1e-3) -> float:
    """``sum_j ||u_j||_{C^r} delta^|j|`` with ``delta`` measured in the scaled variable."""
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    norms = coeff_cr_norms(u, r)
    return float(np.sum(norms * float(delta) ** u.total_degree()))


def rescale_s(u: TaylorField, b_new: float) -> TaylorField:
    if not b_new > 0.0:
        raise ValueError("scale must be positive")
    ratio = u.scale / b_new
    return u.replace(coeffs=u.coeffs * ratio ** u.total_degree()[..., None], scale=b_new)


def field_eval(u: TaylorField, theta, s) -> np.ndarray:
    """Evaluate the series at angles ``theta`` and normal coordinates ``s`` (broadcast)."""
    theta = np.asarray(theta, dtype=float)
    vals = u.spline(theta)  # orders_shape + theta.shape
    if u.index:
        vals[u.zero_index] += theta
    if u.nvars == 1:
        z = u.scale * np.asarray(s, dtype=float)
        out = np.zeros(np.broadcast_shapes(theta.shape, z.shape))
        for j in range(u.orders[0], -1, -1):
            out = out * z + vals[j]
        return out
    s1, s2 = s
    z1 = u.scale * np.asarray(s1, dtype=float)
    z2 = u.scale * np.asarray(s2, dtype=float)
    shape = np.broadcast_shapes(theta.shape, z1.shape, z2.shape)
    out = np.zeros(shape)
    for x in range(u.orders[0], -1, -1):
        inner = np.zeros(shape)
        for y in range(u.orders[1], -1, -1):
            inner = inner * z2 + vals[x, y]
        out = out * z1 + inner
    return out


def resample_field(u: TaylorField, new_knots) -> TaylorField:
    new_knots = np.asarray(new_knots, dtype=float)
    vals = resample_periodic(u.knots, u.periodic_coeffs, new_knots, u.spline_order)
    if u.index:
        vals[u.zero_index] += new_knots
    return TaylorField(new_knots, vals, u.index, u.spline_order, u.scale)


def _column_names(u: TaylorField):
    if u.nvars == 1:
        return [f"c{j}" for j in range(u.orders[0] + 1)]
    return [f"c{x}_{y}" for x in range(u.orders[0] + 1) for y in range(u.orders[1] + 1)]


def write_field_csv(u: TaylorField, path) -> None:
    path = Path(path)
    orders = ",".join(str(o) for o in u.orders)
    flat = u.coeffs.reshape(-1, u.n)
    with path.open("w", newline="") as fh:
        fh.write(f"# L={orders}\n# b={u.scale!r}\n# index={u.index}\n# spline_order={u.spline_order}\n")
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["knot"] + _column_names(u))
        for i in range(u.n):
            w.writerow([repr(float(u.knots[i]))] + [repr(float(x)) for x in flat[:, i]])


def read_field_csv(path) -> TaylorField:
    meta, header, data = _read_meta_csv(path)
    if header[0] != "knot":
        raise InvalidRepresentation(f"unexpected header {header}")
    orders = tuple(int(x) for x in meta["L"].split(","))
    shape = tuple(o + 1 for o in orders)
    coeffs = data[:, 1:].T.reshape(shape + (data.shape[0],)).copy()
    return TaylorField(
        data[:, 0].copy(),
        coeffs,
        int(meta.get("index", 0)),
        int(meta.get("spline_order", 3)),
        float(meta.get("b", 1.0)),
    )
