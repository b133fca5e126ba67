"""Diagnostics on computed parameterizations.

Rotation numbers by weighted Birkhoff averages, detection of phase locking,
angles between the tangent and stable bundles, power-law fits of the angle
collapse, periodic orbits of the map with their multipliers, and backward
extension (globalization) of local isochrons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from ._spline import PeriodicSpline
from .circlefn import CircleFunction
from .errors import DomainError, OrbitNotFound
from .taylorfield import d_theta, field_eval

__all__ = [
    "BreakdownFit",
    "PeriodicOrbitInfo",
    "birkhoff_weight",
    "rotation_number_weighted",
    "detect_rational_lock",
    "rotation_number",
    "min_bundle_angle",
    "fit_breakdown",
    "periodic_orbit_eigen",
    "globalize_isochrons",
    "push_forward",
]


# rotation numbers


def birkhoff_weight(t, p: int = 2) -> np.ndarray:
    """Bump ``exp(-1 / (t (1 - t))^p)`` on (0, 1), zero elsewhere."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = (t > 0.0) & (t < 1.0)
    ti = t[inside]
    with np.errstate(over="ignore", under="ignore"):
        out[inside] = np.exp(-1.0 / (ti * (1.0 - ti)) ** p)
    return out


def _increment_function(a: CircleFunction):
    """Fast scalar evaluator of the periodic part of ``a`` on [0, 1)."""
    if a.index != 1:
        raise DomainError("rotation numbers need an index-1 circle map")
    sp = a.spline
    if sp._kind == "bspline":
        c = sp._coef.tolist()
        n = sp.n

        def inc(y):
            u = y * n
            i = int(u)
            r = u - i
            i %= n
            omr = 1.0 - r
            r2 = r * r
            r3 = r2 * r
            return (
                omr * omr * omr * c[i - 1]
                + (3.0 * r3 - 6.0 * r2 + 4.0) * c[i]
                + (-3.0 * r3 + 3.0 * r2 + 3.0 * r + 1.0) * c[(i + 1) % n]
                + r3 * c[(i + 2) % n]
            ) / 6.0

        return inc

    def inc(y):
        return float(sp(np.array(y)))

    return inc


def orbit_increments(a: CircleFunction, M: int, x0: float = 0.0) -> np.ndarray:
    """Lift increments ``a^(n+1)(x0) - a^n(x0)`` for ``n < M``."""
    inc = _increment_function(a)
    out = np.empty(M)
    y = x0 % 1.0
    for n in range(M):
        d = inc(y)
        out[n] = d
        y = (y + d) % 1.0
    return out


def rotation_number_weighted(a: CircleFunction, M: int = 10_000, p: int = 2, x0: float = 0.0) -> float:
    """Weighted Birkhoff average of the lift increments along the orbit of ``x0``."""
    if M < 1:
        raise ValueError("M must be positive")
    w = birkhoff_weight(np.arange(M) / M, p)
    incs = orbit_increments(a, M, x0)
    return float(np.dot(w, incs) / np.sum(w))


def detect_rational_lock(
    a: CircleFunction,
    M: int = 100_000,
    tol: float = 1e-6,
    q_max: int = 100,
    n_samples: int = 32,
    check_every: int = 1000,
) -> Optional[Tuple[int, int]]:
    """Return ``(p, q)`` if ``a`` is phase locked to rotation number ``p/q``, else ``None``.

    A sample of knots is iterated up to ``M`` times.  The orbit is declared
    periodic when, for the smallest ``q <= q_max``, ``a^q(x) - x`` is within
    ``tol`` of one integer ``p`` at every sample.  This covers attracting
    periodic orbits (samples collapse onto them) and rigid rational rotations.
    """
    if a.index != 1:
        raise DomainError("phase-lock detection needs an index-1 circle map")
    stride = max(1, a.n // n_samples)
    x = a.knots[::stride].copy()
    sp = a.spline

    def test(x):
        y = x.copy()
        for q in range(1, q_max + 1):
            y = y + sp(y)
            d = y - x
            p = np.round(d)
            if np.all(p == p[0]) and np.all(np.abs(d - p) < tol):
                frac = Fraction(int(p[0]), q)
                return frac.numerator, frac.denominator
        return None

    done = 0
    while done < M:
        steps = min(check_every, M - done)
        for _ in range(steps):
            x = x + sp(x)
        x = x - np.floor(x)
        done += steps
        found = test(x)
        if found is not None:
            return found
    return None


def rotation_number(a: CircleFunction, M: int = 10_000, p: int = 2, lock_M: int = 2000, wrap: bool = True) -> float:
    """Exact ``p/q`` when locked, weighted Birkhoff otherwise.

    With ``wrap`` the value is reduced to [0, 1); without it the rotation
    number of the lift is returned.
    """
    lock = detect_rational_lock(a, M=lock_M, check_every=max(1, lock_M // 4))
    rho = lock[0] / lock[1] if lock is not None else rotation_number_weighted(a, M, p)
    return rho % 1.0 if wrap else rho


# bundle angles and breakdown


def min_bundle_angle(P) -> Tuple[float, float, np.ndarray]:
    """Angle (radians, in [0, pi/2]) between tangent and stable directions at each knot.

    Returns the minimum, the knot where it is attained and the full profile.
    For the 3-D problem the smaller of the two angles to the stable directions
    is reported.
    """
    tangent = np.stack([d_theta(Wi).coeffs[(0,) * Wi.nvars] for Wi in P.W])
    nv = P.W[0].nvars
    profiles = []
    for v in range(nv):
        idx = (1,) if nv == 1 else ((1, 0) if v == 0 else (0, 1))
        normal = np.stack([Wi.coeffs[idx] for Wi in P.W]) * P.W[0].scale
        dot = np.abs(np.sum(tangent * normal, axis=0))
        norm = np.linalg.norm(tangent, axis=0) * np.linalg.norm(normal, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            cosang = np.clip(np.where(norm > 0, dot / norm, 1.0), 0.0, 1.0)
        profiles.append(np.arccos(cosang))
    profile = np.min(np.stack(profiles), axis=0)
    i = int(np.argmin(profile))
    return float(profile[i]), float(P.knots[i]), profile


@dataclass
class BreakdownFit:
    """``angle = alpha * (k_crit - k)^beta_exp`` fitted on the tail of a scan."""

    alpha: float
    beta_exp: float
    k_crit: float
    residual: float

    def predict(self, k):
        return self.alpha * (self.k_crit - np.asarray(k, dtype=float)) ** self.beta_exp


def _loglog_fit(k, logang, kc):
    x = np.log(kc - k)
    A = np.vstack([np.ones_like(x), x]).T
    coef, *_ = np.linalg.lstsq(A, logang, rcond=None)
    res = logang - A @ coef
    return coef, float(np.dot(res, res))


def fit_breakdown(samples: Sequence[Tuple[float, float]], k_span: Optional[float] = None) -> BreakdownFit:
    """Fit the power law by scanning ``k_crit`` and regressing in log-log coordinates.

    Parameters
    ----------
    samples : sequence of (k, angle)
        Tail of a continuation scan, at least six points, angles positive.
    k_span : float, optional
        Search ``k_crit`` in ``(max k, max k + k_span]``; defaults to the width
        of the sampled ``k`` range.
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[0] < 6:
        raise ValueError("fit_breakdown needs at least six (k, angle) samples")
    k, ang = data[:, 0], data[:, 1]
    if np.any(ang <= 0.0):
        raise ValueError("angles must be positive")
    logang = np.log(ang)
    kmax = float(np.max(k))
    span = k_span if k_span is not None else max(float(np.ptp(k)), 1e-6)
    lo_off, hi_off = 1e-9 * max(1.0, span), span

    def obj(logoff):
        return _loglog_fit(k, logang, kmax + math.exp(logoff))[1]

    grid = np.linspace(math.log(lo_off), math.log(hi_off), 400)
    vals = np.array([obj(g) for g in grid])
    j = int(np.argmin(vals))
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    if a < b:
        res = minimize_scalar(obj, bounds=(a, b), method="bounded", options={"xatol": 1e-13})
        best = res.x if res.fun <= vals[j] else grid[j]
    else:
        best = grid[j]
    kc = kmax + math.exp(best)
    coef, rss = _loglog_fit(k, logang, kc)
    return BreakdownFit(alpha=float(math.exp(coef[0])), beta_exp=float(coef[1]), k_crit=float(kc), residual=rss)


# periodic orbits


@dataclass
class PeriodicOrbitInfo:
    q: int
    p: int
    points: np.ndarray  # (q, dim)
    eigenvalues: np.ndarray  # sorted by decreasing modulus
    r_star: Optional[float] = None
    iterations: int = 0


def _orbit_and_jacobian(fmap, x, q):
    pts = [x]
    J = np.eye(x.size)
    for _ in range(q):
        J = fmap.jacobian(pts[-1]) @ J
        pts.append(fmap.apply(pts[-1]))
    return np.array(pts), J


def periodic_orbit_eigen(
    fmap, guess, q: int, p: Optional[int] = None, tol: float = 1e-12, maxit: int = 50
) -> PeriodicOrbitInfo:
    """Newton solve of ``f^q(x) = x + (p, 0, ...)`` and the multipliers of the orbit."""
    x = np.asarray(guess, dtype=float).copy()
    if p is None:
        pts, _ = _orbit_and_jacobian(fmap, x, q)
        p = int(round(pts[-1][0] - x[0]))
    shift = np.zeros_like(x)
    shift[0] = p
    for it in range(maxit + 1):
        pts, J = _orbit_and_jacobian(fmap, x, q)
        F = pts[-1] - x - shift
        if not np.all(np.isfinite(F)):
            break
        if np.max(np.abs(F)) <= tol:
            ev = np.linalg.eigvals(J)
            ev = ev[np.argsort(-np.abs(ev))]
            r_star = None
            mods = np.abs(ev)
            if ev.size == 2 and np.all(np.isreal(ev)) and np.all((mods > 0) & (mods < 1)):
                r_star = float(math.log(mods[1]) / math.log(mods[0]))
            return PeriodicOrbitInfo(q, p, pts[:-1], ev, r_star, it)
        step, *_ = np.linalg.lstsq(J - np.eye(x.size), -F, rcond=None)
        x = x + step
    raise OrbitNotFound(f"no period-{q} orbit found near {np.asarray(guess)}")


# globalization


def _iterate_a(a: CircleFunction, theta, n: int):
    theta = np.asarray(theta, dtype=float)
    for _ in range(n):
        theta = theta + a.spline(theta)
    return theta


def globalize_isochrons(
    fmap,
    P,
    thetas: Sequence[float],
    n_back: int,
    s_range,
    grid_strategy: str = "direct",
    n_lock: int = 30,
) -> List[np.ndarray]:
    """Extend local leaves by backward iteration.

    For each ``theta0`` the local leaf at ``a^n(theta0)`` is sampled at
    ``s_range`` and pulled back ``n = n_back`` times with the inverse map,
    giving points of the leaf through ``W(theta0, 0)``.  With
    ``grid_strategy="phase-locked"`` the base angles are first advanced ``n_lock``
    times by ``a`` so that they sit near the attracting periodic orbit.

    Returns one array per angle, shape ``(len(s_range), dim)``, first column
    unwrapped.
    """
    s = np.asarray(s_range, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    if grid_strategy == "phase-locked":
        thetas = _iterate_a(P.a, thetas, n_lock)
    elif grid_strategy != "direct":
        raise ValueError(f"unknown grid strategy {grid_strategy!r}")
    if n_back and not hasattr(fmap, "inverse"):
        raise DomainError("globalization needs a map with an analytic inverse")
    curves = []
    for th0 in thetas:
        th_seed = float(_iterate_a(P.a, np.array([th0]), n_back)[0])
        pts = _leaf_points(P, th_seed, s)
        for _ in range(n_back):
            pts = fmap.inverse(pts)
        curves.append(pts.T.copy())
    return curves


def _leaf_points(P, theta, s):
    th = np.full(s.shape, float(theta))
    if P.W[0].nvars == 1:
        return np.stack([field_eval(Wi, th, s) for Wi in P.W])
    zero = np.zeros_like(s)
    return np.stack([field_eval(Wi, th, (s, zero)) for Wi in P.W])


def push_forward(fmap, points: np.ndarray, n: int) -> np.ndarray:
    """Apply the map ``n`` times to rows of ``points`` (shape ``(m, dim)``)."""
    pts = np.asarray(points, dtype=float).T
    for _ in range(n):
        pts = fmap.apply(pts)
    return pts.T
