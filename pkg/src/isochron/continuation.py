"""Continuation of parameterizations along a path in parameter space.

The path is ``params(eps) = start + eps * (end - start)`` for ``eps`` in [0, 1].
Steps are adapted by halving on failure and growing after success; the grid is
doubled when the solution becomes irregular or the Newton residual stalls on a
discretization floor, and the spline order is lowered when the fitted
regularity of the circle drops.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .analysis import min_bundle_angle, rotation_number
from ._spline import is_uniform
from .circlefn import (
    CircleFunction,
    best_inverse,
    lowpass,
    lowpass_periodic,
    spectral_tail,
    uniform_knots,
)
from .errors import BracketError, IsochronError, SolverNoConvergence
from .newton import (
    NewtonOptions,
    Parameterization,
    Parameterization3,
    newton_step,
    resample_parameterization,
    residual,
    residual_norms,
    solution_norm,
    solve_invariance,
)
from .taylorfield import TaylorField

__all__ = [
    "ContinuationRecord",
    "ContinuationOptions",
    "Path",
    "continue_family",
    "predictor_first_order",
    "increase_order",
    "continue_fixed_rotation",
    "estimate_regularity",
    "irregularity",
    "with_spline_order",
]


@dataclass
class ContinuationRecord:
    eps: float
    params: Dict[str, float]
    N: int
    L: object
    spline_order: int
    residual: Tuple[float, float, float]
    rotation_number: float
    min_angle: float
    accepted: bool
    step: float
    iterations: int = 0
    note: str = ""


@dataclass
class ContinuationOptions:
    """Step control, grid management and solver settings of a continuation run."""

    tol: float = 1e-13
    maxit: int = 12
    step: float = 1e-3
    step_max: float = 0.05
    step_min: float = 1e-8
    grow: float = 1.3
    n_max: int = 1 << 16
    irregularity_tol: float = 1e-4
    tail_tol: float = 1e-10
    filter_fraction: Optional[float] = 0.125
    norm_double: Optional[float] = None
    floor_factor: float = 100.0
    lower_spline: bool = True
    quadratic_below: float = 2.0
    linear_below: float = 1.0
    norm_cap: float = 1e3
    predictor: str = "order0"
    rotation: bool = True
    rotation_M: int = 10_000
    record_rejected: bool = True
    max_steps: int = 100_000
    time_limit: Optional[float] = None
    newton: NewtonOptions = field(default_factory=NewtonOptions)


@dataclass
class Path:
    """Straight segment between two parameter dictionaries of one map family."""

    start: Dict[str, float]
    end: Dict[str, float]

    def at(self, eps: float) -> Dict[str, float]:
        return {k: self.start[k] + eps * (self.end.get(k, self.start[k]) - self.start[k]) for k in self.start}

    def tangent(self) -> Dict[str, float]:
        return {k: self.end.get(k, self.start[k]) - self.start[k] for k in self.start}

    @property
    def length(self) -> float:
        return max((abs(v) for v in self.tangent().values()), default=0.0)


# grid and regularity diagnostics


def irregularity(P) -> float:
    """Max second difference of the periodic part of the order-zero coefficients."""
    out = 0.0
    for Wi in P.W:
        c = Wi.periodic_coeffs[(0,) * Wi.nvars]
        d2 = np.roll(c, -1) - 2.0 * c + np.roll(c, 1)
        out = max(out, float(np.max(np.abs(d2))))
    return out


def estimate_regularity(f: CircleFunction, noise: float = 1e-8) -> float:
    """Fit ``|c_k| ~ k^-(r+1)`` to the Fourier envelope of ``f``; ``inf`` when resolved.

    The function counts as resolved (smooth at this grid) when the envelope at
    ``N/4`` is below ``noise`` relative to the largest nonconstant mode.
    Otherwise the envelope on ``N/16 <= k < N/2`` is fitted in log-log form.
    """
    # the Nyquist mode is dropped: its rfft weight differs by a factor 2
    c = np.abs(np.fft.rfft(f.periodic_part))[: (f.n + 1) // 2] / f.n
    scale = float(np.max(c[1:])) if c.size > 1 else 0.0
    if scale == 0.0:
        return math.inf
    env = np.maximum.accumulate(c[::-1])[::-1]
    lo, hi = max(2, f.n // 16), max(4, f.n // 2)
    if env[min(f.n // 4, env.size - 1)] <= noise * scale or hi - lo < 4:
        return math.inf
    k = np.arange(lo, hi)
    slope = np.polyfit(np.log(k), np.log(env[lo:hi]), 1)[0]
    return float(-slope - 1.0)


def with_spline_order(P, order: int):
    W = tuple(Wi.replace(spline_order=order) for Wi in P.W)
    a = P.a.with_order(order)
    rates = [l.with_order(order) for l in P.rates]
    ainv = P.ainv.with_order(order) if P.ainv is not None else None
    if isinstance(P, Parameterization3):
        return Parameterization3(W, a, rates[0], rates[1], ainv)
    return Parameterization(W, a, rates[0], ainv)


def double_grid(P):
    return resample_parameterization(P, uniform_knots(2 * P.n))


def _unknown_stacks(P):
    """Periodic parts of every unknown, as (array, index) pairs."""
    out = [(Wi.periodic_coeffs, 0) for Wi in P.W]
    out.append((P.a.periodic_part, 0))
    out += [(l.values, 0) for l in P.rates]
    return out


def spectral_tail_size(P) -> float:
    """Largest Fourier amplitude of any unknown in the band ``[N/16, N/8)``."""
    return max(spectral_tail(v) for v, _ in _unknown_stacks(P))


def filter_parameterization(P, fraction: float):
    """Band-limit every unknown below ``fraction * N`` and recompute the inverse map.

    On a uniform grid the spline discretization of the composition operator
    loses accuracy above about ``N/8``; content there is not controlled by the
    Newton step and is amplified from one continuation step to the next.
    Removing it between steps keeps the iteration stable.
    """
    if not is_uniform(P.knots):
        return P
    W = tuple(Wi.replace(coeffs=_lowpass_field(Wi, fraction)) for Wi in P.W)
    a = lowpass(P.a, fraction)
    rates = [lowpass(l, fraction) for l in P.rates]
    ainv = best_inverse(a, P.ainv)
    if isinstance(P, Parameterization3):
        return Parameterization3(W, a, rates[0], rates[1], ainv)
    return Parameterization(W, a, rates[0], ainv)


def _lowpass_field(u: TaylorField, fraction: float) -> np.ndarray:
    c = lowpass_periodic(u.periodic_coeffs, fraction)
    if u.index:
        c[u.zero_index] += u.knots
    return c


# predictor


def predictor_first_order(fmap, P, dparams: Dict[str, float], h: float, opts: Optional[NewtonOptions] = None):
    """First-order extrapolation ``P + h dP/deps``.

    The tangent solves the linearized invariance equation with the residual
    replaced by ``df/deps o W``: it is one quasi-Newton correction with that
    source term, scaled by ``h``.
    """
    if h == 0.0:
        return P
    src = fmap.param_derivative_field(P.W, dparams)
    if all(not np.any(s.coeffs) for s in src):
        return P
    e = tuple(s.replace(coeffs=h * s.coeffs) for s in src)
    P_new, _ = newton_step(fmap, P, opts, e)
    return P_new


# continuation driver


def _record(fmap, P, eps, params, opts, accepted, step, iterations=0, note="", norms=None):
    if norms is None:
        norms = residual_norms(residual(fmap, P), opts.newton.delta)
    rot = math.nan
    if opts.rotation:
        try:
            rot = rotation_number(P.a, opts.rotation_M)
        except IsochronError:
            rot = math.nan
    ang = min_bundle_angle(P)[0]
    return ContinuationRecord(
        eps=float(eps),
        params=dict(params),
        N=P.n,
        L=P.L,
        spline_order=P.a.spline_order,
        residual=tuple(float(x) for x in norms),
        rotation_number=float(rot),
        min_angle=float(ang),
        accepted=accepted,
        step=float(step),
        iterations=iterations,
        note=note,
    )


def continue_family(
    fmap,
    P0,
    path: Path,
    opts: Optional[ContinuationOptions] = None,
    callback: Optional[Callable] = None,
):
    """Walk ``eps`` from 0 to 1 along ``path`` with adaptive steps.

    Parameters
    ----------
    fmap : map object
        Any member of the family; parameters are set from ``path``.
    P0 : Parameterization
        Solution at ``eps = 0``.
    callback : callable, optional
        Called as ``callback(record, P)`` after every accepted step.

    Returns
    -------
    records : list of ContinuationRecord
        The last record's ``note`` gives the termination reason.
    P : the last accepted parameterization (before any filtering or regridding).
    """
    opts = opts or ContinuationOptions()
    t_start = time.perf_counter()
    m = fmap.with_params(**path.at(0.0))
    P = P0
    rec = _record(m, P, 0.0, path.at(0.0), opts, True, 0.0, note="start")
    records = [rec]
    if callback:
        callback(rec, P)
    if path.length == 0.0:
        rec.note = "empty path"
        return records, P
    eps = 0.0
    ds = opts.step
    P_acc = P
    tangent = path.tangent()
    reason = "completed"
    for _ in range(opts.max_steps):
        if eps >= 1.0:
            break
        if opts.time_limit is not None and time.perf_counter() - t_start > opts.time_limit:
            reason = "time limit"
            break
        if ds < opts.step_min:
            reason = "step underflow"
            break
        h = min(ds, 1.0 - eps)
        trial = eps + h
        params = path.at(trial)
        mt = fmap.with_params(**params)
        try:
            guess = P
            if opts.predictor == "first":
                guess = predictor_first_order(m, P, tangent, h, opts.newton)
            P_new, hist = solve_invariance(mt, guess, opts.tol, opts.maxit, opts.newton, opts.norm_cap)
        except SolverNoConvergence as exc:
            floor = min((s.residual[0] for s in exc.history), default=math.inf)
            if floor <= opts.floor_factor * opts.tol and 2 * P.n <= opts.n_max:
                # the residual stalled on the discretization floor: refine, same step
                P = double_grid(P)
                records[-1].note += f" grid doubled to {P.n} (residual floor)"
                continue
            _reject(records, opts, trial, params, P, h, exc.history, str(exc))
            ds = 0.5 * h
            continue
        except (IsochronError, FloatingPointError, np.linalg.LinAlgError) as exc:
            hist = getattr(exc, "history", None) or getattr(exc, "diagnostics", {}).get("history")
            _reject(records, opts, trial, params, P, h, hist, f"{type(exc).__name__}: {exc}")
            ds = 0.5 * h
            continue
        size = solution_norm(P_new, opts.newton.delta)
        if size > opts.norm_cap:
            reason = "norm cap"
            break
        P, eps, m = P_new, trial, mt
        P_acc = P
        rec = _record(m, P, eps, params, opts, True, h, len(hist) - 1, norms=hist[-1].residual)
        records.append(rec)
        if callback:
            callback(rec, P)
        ds = min(ds * opts.grow, opts.step_max)
        P = _manage_grid(P, opts, rec)
    else:
        reason = "step limit"
    if eps < 1.0 and reason == "completed":
        reason = "stopped"
    records[-1].note = (records[-1].note + " " + reason).strip()
    return records, P_acc


def _reject(records, opts, eps, params, P, h, history, note):
    if not opts.record_rejected:
        return
    res = (math.nan,) * 3
    if history:
        res = min((s.residual for s in history), key=lambda r: r[0])
    records.append(
        ContinuationRecord(
            eps=float(eps),
            params=dict(params),
            N=P.n,
            L=P.L,
            spline_order=P.a.spline_order,
            residual=tuple(float(x) for x in res),
            rotation_number=math.nan,
            min_angle=math.nan,
            accepted=False,
            step=float(h),
            note=note,
        )
    )


def _manage_grid(P, opts: ContinuationOptions, rec: ContinuationRecord):
    """Filter, double the grid or lower the spline order according to the diagnostics."""
    if opts.filter_fraction is not None:
        P = filter_parameterization(P, opts.filter_fraction)
    need = irregularity(P) > opts.irregularity_tol or spectral_tail_size(P) > opts.tail_tol
    if opts.norm_double is not None and solution_norm(P, opts.newton.delta, r=2) > opts.norm_double:
        need = True
    if need and 2 * P.n <= opts.n_max:
        P = double_grid(P)
        rec.note += f" grid doubled to {P.n}"
    if opts.lower_spline and P.a.spline_order > 1:
        r = estimate_regularity(P.W[-1].coeff())
        order = P.a.spline_order
        if r < opts.linear_below:
            order = 1
        elif r < opts.quadratic_below:
            order = min(order, 2)
        if order != P.a.spline_order:
            P = with_spline_order(P, order)
            rec.note += f" spline order {order}"
    return P


# order raising


def _truncation_residual_norm(fmap, P, delta, probe_extra):
    orders = tuple(o + probe_extra for o in P.W[0].orders)
    W = tuple(Wi.extend(orders) for Wi in P.W)
    return residual_norms(residual(fmap, P.with_(W=W)), delta)[0]


def increase_order(
    fmap,
    P,
    L_start: int,
    L_end: int,
    tol: float = 1e-10,
    delta_start: float = 1e-3,
    delta_cap: float = 1e3,
    opts: Optional[NewtonOptions] = None,
    solve_tol: float = 1e-13,
):
    """Raise the truncation order one step at a time and find the widest valid domain.

    After each order is solved, the residual of the series (including the
    terms beyond the truncation that the map generates) is a nondecreasing
    function of ``delta``; the largest ``delta`` with residual ``<= tol`` is
    located by Brent's method on ``log(delta)``.

    Returns the enlarged parameterization and a list of ``(L, delta_max)``.
    """
    opts = opts or NewtonOptions()
    if L_end < L_start:
        raise ValueError("L_end must be at least L_start")
    schedule = []
    two_d = P.W[0].nvars == 1
    for L in range(L_start, L_end + 1):
        orders = L if two_d else (L, L)
        if P.W[0].orders != ((L,) if two_d else (L, L)):
            W = tuple(Wi.extend(orders).truncate(orders) for Wi in P.W)
            P = P.with_(W=W)
            P, _ = solve_invariance(fmap, P, solve_tol, 20, opts)
        extra = max(L, 1)

        def g(logd):
            r = _truncation_residual_norm(fmap, P, math.exp(logd), extra)
            return math.log(max(r, 1e-300)) - math.log(tol)

        lo, hi = math.log(delta_start * 1e-6), math.log(delta_cap)
        if g(hi) <= 0.0:
            dmax = delta_cap
        elif g(lo) > 0.0:
            dmax = 0.0
        else:
            dmax = math.exp(brentq(g, lo, hi, xtol=1e-10))
        schedule.append((L, dmax))
    return P, schedule


# prescribed rotation number


def continue_fixed_rotation(
    fmap,
    P0,
    omega_target: float,
    k_path: Sequence[float],
    opts: Optional[ContinuationOptions] = None,
    rot_tol: float = 1e-10,
    bracket: float = 0.02,
    max_expand: int = 8,
    rotation_M: int = 10_000,
    eta_name: str = "eta",
    k_name: str = "k",
):
    """Follow ``k_path`` while tuning the drift so that the rotation number stays fixed.

    Returns the list of records and the ``(k, eta)`` pairs; raises
    :class:`BracketError` when no sign change can be found around the previous
    drift value.
    """
    from .analysis import rotation_number_weighted

    opts = opts or ContinuationOptions(rotation=False)
    P = P0
    eta = fmap.param_dict()[eta_name]
    records, pairs = [], []
    iterations = []
    for k in k_path:
        cache = {}

        def solve_at(e):
            key = float(e)
            if key not in cache:
                m = fmap.with_params(**{k_name: float(k), eta_name: key})
                Pk, _ = solve_invariance(m, P, opts.tol, opts.maxit, opts.newton)
                rho = rotation_number_weighted(Pk.a, rotation_M)
                cache[key] = (rho - omega_target, Pk)
            return cache[key]

        def F(e):
            return solve_at(e)[0]

        f0 = F(eta)
        if abs(f0) <= rot_tol:
            root = eta
            n_it = 0
        else:
            width = bracket
            lo = hi = None
            for _ in range(max_expand):
                a_, b_ = eta - width, eta + width
                try:
                    fa, fb = F(a_), F(b_)
                except IsochronError:
                    width *= 0.5
                    continue
                if fa * f0 <= 0:
                    lo, hi = a_, eta
                    break
                if fb * f0 <= 0:
                    lo, hi = eta, b_
                    break
                width *= 2.0
            if lo is None:
                raise BracketError(f"no sign change of the rotation error near eta={eta} at k={k}")
            root, info = brentq(F, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=100, full_output=True)
            n_it = info.iterations
        _, P = solve_at(root)
        eta = float(root)
        iterations.append(n_it)
        m = fmap.with_params(**{k_name: float(k), eta_name: eta})
        rec = _record(m, P, float(k), m.param_dict(), opts, True, 0.0, n_it)
        rec.rotation_number = float(rotation_number_weighted(P.a, rotation_M))
        records.append(rec)
        pairs.append((float(k), eta))
    return records, pairs, P
