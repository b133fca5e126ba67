"""Periodic spline interpolation on [0, 1).

Uniform cubic grids use a B-spline representation whose interpolation system
is circulant and is solved with an FFT.  Everything else (non-uniform knots,
quadratic splines) goes through scipy.  Values are interpolated along the last
axis so a whole stack of functions sharing one knot vector is handled at once.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline, make_interp_spline

_UNIFORM_RTOL = 1e-13


def is_uniform(knots: np.ndarray) -> bool:
    n = knots.size
    return bool(np.allclose(knots, np.arange(n) / n, rtol=0.0, atol=_UNIFORM_RTOL))


def check_knots(knots: np.ndarray, order: int) -> None:
    from .errors import InvalidRepresentation

    if knots.ndim != 1:
        raise InvalidRepresentation("knot vector must be one-dimensional")
    if order not in (1, 2, 3):
        raise InvalidRepresentation(f"spline order must be 1, 2 or 3, got {order}")
    minimum = 4 if order == 3 else order + 1
    if knots.size < minimum:
        raise InvalidRepresentation(
            f"order-{order} spline needs at least {minimum} knots, got {knots.size}"
        )
    if not np.all(np.isfinite(knots)):
        raise InvalidRepresentation("knots must be finite")
    if knots[0] < 0.0 or knots[-1] >= 1.0:
        raise InvalidRepresentation("knots must lie in [0, 1)")
    if np.any(np.diff(knots) <= 0.0):
        raise InvalidRepresentation("knots must be strictly increasing")


# cubic B-spline basis on one cell, local coordinate r in [0, 1).
def _bspline_weights(r: np.ndarray, nu: int):
    if nu == 0:
        r2 = r * r
        r3 = r2 * r
        omr = 1.0 - r
        return (
            omr * omr * omr / 6.0,
            (3.0 * r3 - 6.0 * r2 + 4.0) / 6.0,
            (-3.0 * r3 + 3.0 * r2 + 3.0 * r + 1.0) / 6.0,
            r3 / 6.0,
        )
    if nu == 1:
        r2 = r * r
        omr = 1.0 - r
        return (-0.5 * omr * omr, 1.5 * r2 - 2.0 * r, -1.5 * r2 + r + 0.5, 0.5 * r2)
    if nu == 2:
        return (1.0 - r, 3.0 * r - 2.0, 1.0 - 3.0 * r, r)
    if nu == 3:
        one = np.ones_like(r)
        return (-one, 3.0 * one, -3.0 * one, one)
    zero = np.zeros_like(r)
    return (zero, zero, zero, zero)


class PeriodicSpline:
    """Periodic interpolant of ``values[..., i]`` at ``knots[i]``, period 1."""

    def __init__(self, knots: np.ndarray, values: np.ndarray, order: int = 3):
        self.knots = knots
        self.order = order
        self.n = knots.size
        values = np.asarray(values, dtype=float)
        self.batch_shape = values.shape[:-1]
        self._uniform = is_uniform(knots)
        if order == 3 and self._uniform:
            n = self.n
            symbol = (4.0 + 2.0 * np.cos(2.0 * np.pi * np.arange(n // 2 + 1) / n)) / 6.0
            self._coef = np.fft.irfft(np.fft.rfft(values, axis=-1) / symbol, n=n, axis=-1)
            self._kind = "bspline"
        elif order == 1:
            self._values = values
            self._kind = "linear"
        else:
            x = np.append(knots, knots[0] + 1.0)
            y = np.concatenate([values, values[..., :1]], axis=-1)
            if order == 3:
                self._sp = CubicSpline(x, y, axis=-1, bc_type="periodic")
            else:
                self._sp = make_interp_spline(x, y, k=2, bc_type="periodic", axis=-1)
            self._kind = "scipy"

    def __call__(self, t, nu: int = 0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self._kind == "bspline":
            n = self.n
            u = (t - np.floor(t)) * n
            i = np.floor(u)
            r = u - i
            i = i.astype(np.intp) % n
            w = _bspline_weights(r, nu)
            c = self._coef
            out = (
                w[0] * c[..., (i - 1) % n]
                + w[1] * c[..., i]
                + w[2] * c[..., (i + 1) % n]
                + w[3] * c[..., (i + 2) % n]
            )
            if nu:
                out = out * float(n) ** nu
            return out
        if self._kind == "linear":
            return self._linear(t, nu)
        x0 = self.knots[0]
        tt = x0 + np.mod(t - x0, 1.0)
        # mod can round up to exactly x0 + 1; the periodic spline is defined there too
        flat = tt.reshape(-1)
        res = self._sp(flat, nu) if nu else self._sp(flat)
        return res.reshape(self.batch_shape + t.shape)

    def _linear(self, t: np.ndarray, nu: int) -> np.ndarray:
        x = np.append(self.knots, self.knots[0] + 1.0)
        y = np.concatenate([self._values, self._values[..., :1]], axis=-1)
        x0 = self.knots[0]
        tt = x0 + np.mod(t - x0, 1.0)
        j = np.clip(np.searchsorted(x, tt, side="right") - 1, 0, self.n - 1)
        h = x[j + 1] - x[j]
        slope = (y[..., j + 1] - y[..., j]) / h
        if nu == 0:
            return y[..., j] + slope * (tt - x[j])
        if nu == 1:
            return slope
        return np.zeros_like(slope)
