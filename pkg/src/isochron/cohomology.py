"""Solver for the twisted cohomological equation ``phi = l * phi o a + eta``.

The doubling scheme sums ``2^k`` terms of the Neumann series after ``k`` passes:
``phi <- phi + L * phi o A``, ``L <- L * L o A``, ``A <- A o A``.  The stopping
test is the residual of the discrete equation with the original map ``a``;
leftover interpolation error is removed by re-solving for the residual
(polishing).  All routines work on stacks of right-hand sides that share the
map ``a``, which is how the Newton step uses them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._spline import PeriodicSpline
from .circlefn import CircleFunction, compose, same_grid
from .errors import CohoNoConvergence, DomainError, GridMismatch, NoContraction

__all__ = [
    "CohoProblem",
    "CohoResult",
    "dynamical_average",
    "solve_coho",
    "solve_coho_batch",
    "polish_coho",
    "solve_coho_reversed",
    "coho_residual",
    "doubling_maps",
]


@dataclass(frozen=True, eq=False)
class CohoProblem:
    l: CircleFunction
    a: CircleFunction
    eta: CircleFunction
    tolerance: float = 1e-13
    max_doublings: int = 10

    def __post_init__(self):
        if self.a.index != 1:
            raise DomainError("the map of a cohomological equation must have index 1")
        if self.l.index or self.eta.index:
            raise DomainError("l and eta must be index-0 functions")
        if not (same_grid(self.l.knots, self.a.knots) and same_grid(self.eta.knots, self.a.knots)):
            raise GridMismatch("l, a and eta must share one grid")


@dataclass
class CohoResult:
    """Outcome of a batched solve."""

    phi: np.ndarray
    residual: np.ndarray
    passes: int
    polish_rounds: int
    sweeps: int = 0


def doubling_maps(a: CircleFunction, k: int) -> list:
    """Sample vectors of ``a^(2^i)`` for ``i = 0..k``, cached on ``a``."""
    cache = a.__dict__.setdefault("_doubling_cache", [a.values])
    while len(cache) <= k:
        A = cache[-1]
        sp = PeriodicSpline(a.knots, A - a.knots, a.spline_order)
        cache.append(A + sp(A))
    return cache[: k + 1]


def dynamical_average(l: CircleFunction, a: CircleFunction, n: int = 64) -> float:
    """``(max_theta |l(theta) l(a theta) ... l(a^(n-1) theta)|)^(1/n)`` over the knots.

    The orbit of every knot is followed directly and the product is accumulated
    as a sum of logarithms, which avoids under- and overflow for large ``n``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    x = a.knots.copy()
    logs = np.zeros_like(x)
    lsp, asp = l.spline, a.spline
    with np.errstate(divide="ignore"):
        for _ in range(n):
            logs += np.log(np.abs(lsp(x)))
            x = x + asp(x)
    return float(np.exp(np.max(logs) / n))


def coho_residual(phi: np.ndarray, l: np.ndarray, a: CircleFunction, eta: np.ndarray, order=None):
    """Residual ``phi - l * phi o a - eta`` of a stack, on the knots of ``a``."""
    sp = PeriodicSpline(a.knots, phi, order or a.spline_order)
    return phi - l * sp(a.values) - eta


def _doubling(l, a, eta, tol, max_doublings, order):
    """Core loop. Returns (phi, residual sup-norms, passes)."""
    m = eta.shape[0]
    knots = a.knots
    maps = doubling_maps(a, max_doublings)
    phi = eta.copy()
    L = np.broadcast_to(l, eta.shape).copy()
    active = np.ones(m, dtype=bool)
    res = np.full(m, np.inf)
    passes = 0
    for k in range(max_doublings + 1):
        idx = np.flatnonzero(active)
        sp = PeriodicSpline(knots, np.concatenate([phi[idx], L[idx]]), order)
        at_a = sp(a.values)
        r = np.max(np.abs(phi[idx] - l[idx] * at_a[: idx.size] - eta[idx]), axis=-1)
        res[idx] = r
        done = r <= tol[idx]
        active[idx[done]] = False
        if not active.any() or k == max_doublings:
            break
        keep = ~done
        idx = idx[keep]
        at_A = at_a if k == 0 else sp(maps[k])
        at_A = at_A[np.concatenate([keep, keep])]
        phi[idx] = phi[idx] + L[idx] * at_A[: idx.size]
        L[idx] = L[idx] * at_A[idx.size :]
        passes = k + 1
    return phi, res, passes


def _sweep(phi, res, l, a, eta, tol, max_sweeps, order, patience: int = 10) -> int:
    """Fixed-point sweeps on rows above tolerance, keeping the best iterate in place."""
    bad = np.flatnonzero(res > tol)
    if bad.size == 0 or max_sweeps <= 0:
        return 0
    cur = phi[bad].copy()
    r = coho_residual(cur, l[bad], a, eta[bad], order)
    since_best = np.zeros(bad.size, dtype=int)
    n = 0
    while n < max_sweeps:
        cur = cur - r
        r = coho_residual(cur, l[bad], a, eta[bad], order)
        n += 1
        rn = np.max(np.abs(r), axis=-1)
        better = rn < res[bad]
        phi[bad[better]] = cur[better]
        res[bad[better]] = rn[better]
        since_best = np.where(better, 0, since_best + 1)
        if np.all((res[bad] <= tol[bad]) | (since_best >= patience)):
            break
    return n


def solve_coho_batch(
    l: np.ndarray,
    a: CircleFunction,
    eta: np.ndarray,
    tolerance=1e-13,
    max_doublings: int = 10,
    polish: int = 8,
    order: Optional[int] = None,
    max_sweeps: int = 200,
) -> CohoResult:
    """Solve a stack of equations sharing ``a``.

    Parameters
    ----------
    l, eta : ndarray (m, N)
        Samples on ``a.knots``; ``l`` may also be broadcastable to ``eta``.
    tolerance : float or ndarray (m,)
        Absolute C0 tolerance per row.
    polish : int
        Maximum number of residual re-solves after the first doubling run.
    max_sweeps : int
        Fixed-point sweeps ``phi <- eta + l * phi o a`` tried last.  The
        doubled maps ``a^(2^i)`` differ from repeated composition at the grid
        scale, so polishing by doubling can stall there; single sweeps use the
        one-step operator and contract that error by ``|l|`` per sweep.

    Raises
    ------
    CohoNoConvergence
        Some row is still above tolerance; the best solution is attached.
    """
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    l = np.broadcast_to(np.asarray(l, dtype=float), eta.shape)
    tol = np.broadcast_to(np.asarray(tolerance, dtype=float), eta.shape[:1]).copy()
    order = order or a.spline_order
    phi, res, passes = _doubling(l, a, eta, tol, max_doublings, order)
    rounds = 0
    while np.any(res > tol) and rounds < polish:
        bad = np.flatnonzero(res > tol)
        ehat = coho_residual(phi[bad], l[bad], a, eta[bad], order)
        # correction solves d = l * d o a - ehat
        d, _, _ = _doubling(l[bad], a, -ehat, tol[bad] * 0.5, max_doublings, order)
        trial = phi[bad] + d
        new_res = np.max(np.abs(coho_residual(trial, l[bad], a, eta[bad], order)), axis=-1)
        better = new_res < res[bad]
        if not better.any():
            break
        phi[bad[better]] = trial[better]
        res[bad[better]] = new_res[better]
        rounds += 1
    sweeps = _sweep(phi, res, l, a, eta, tol, max_sweeps, order)
    out = CohoResult(phi, res, passes, rounds, sweeps)
    if np.any(res > tol):
        raise CohoNoConvergence(
            f"cohomological equation not solved: residual {float(np.max(res)):.3e} above tolerance",
            float(np.max(res)),
            out,
        )
    return out


def solve_coho(p: CohoProblem, polish: int = 8) -> CircleFunction:
    """Solve one problem by doubling, then polish to tolerance."""
    try:
        r = solve_coho_batch(
            p.l.values[None], p.a, p.eta.values[None], p.tolerance, p.max_doublings, polish
        )
    except CohoNoConvergence as exc:
        sol = exc.solution
        raise CohoNoConvergence(
            str(exc), exc.residual, CircleFunction(p.a.knots, sol.phi[0], 0, p.a.spline_order)
        ) from None
    return CircleFunction(p.a.knots, r.phi[0], 0, p.a.spline_order)


def polish_coho(phi: CircleFunction, p: CohoProblem, max_rounds: int = 8) -> CircleFunction:
    """Repeatedly solve for the residual correction until the residual stops improving."""
    vals = phi.values.copy()
    l, eta = p.l.values, p.eta.values
    res = np.max(np.abs(coho_residual(vals, l, p.a, eta)))
    for _ in range(max_rounds):
        if res <= p.tolerance:
            break
        ehat = coho_residual(vals, l, p.a, eta)
        d, _, _ = _doubling(
            l[None], p.a, -ehat[None], np.array([0.5 * p.tolerance]), p.max_doublings, p.a.spline_order
        )
        trial = vals + d[0]
        new = np.max(np.abs(coho_residual(trial, l, p.a, eta)))
        if not new < res:
            break
        vals, res = trial, new
    return phi.with_values(vals)


def reversed_problem(p: CohoProblem, ainv: CircleFunction) -> CohoProblem:
    """Backward form ``phi = (1 / l o ainv) phi o ainv - (eta / l) o ainv``."""
    l_back = compose(p.l, ainv)
    if np.any(l_back.values == 0.0):
        raise NoContraction("l vanishes; the backward equation is undefined")
    eta_back = compose(p.eta, ainv)
    return CohoProblem(
        CircleFunction(ainv.knots, 1.0 / l_back.values, 0, ainv.spline_order),
        ainv,
        CircleFunction(ainv.knots, -eta_back.values / l_back.values, 0, ainv.spline_order),
        p.tolerance,
        p.max_doublings,
    )


def solve_coho_reversed(p: CohoProblem, ainv: CircleFunction) -> CircleFunction:
    return solve_coho(reversed_problem(p, ainv))


def contraction_side(
    l: CircleFunction, a: CircleFunction, ainv: CircleFunction, n: int = 64, threshold: float = 0.98
) -> str:
    """``"forward"`` or ``"reversed"``; raises :class:`NoContraction` if neither contracts."""
    fwd = dynamical_average(l, a, n)
    if fwd < threshold:
        return "forward"
    lb = compose(l, ainv)
    with np.errstate(divide="ignore"):
        inv = CircleFunction(ainv.knots, 1.0 / lb.values, 0, ainv.spline_order)
    back = dynamical_average(inv, ainv, n)
    if back < threshold:
        return "reversed"
    raise NoContraction(
        f"no contraction: forward average {fwd:.4f}, reversed average {back:.4f}"
    )


def solvability_bound(l: CircleFunction, a: CircleFunction) -> float:
    """Diagnostic regularity bound ``-ln||l|| / ln||Da||`` (inf when ``||Da|| <= 1``)."""
    nl = float(np.max(np.abs(l.values)))
    da = float(np.max(np.abs(a.spline(a.knots, 1) + 1.0)))
    if da <= 1.0:
        return math.inf
    return -math.log(nl) / math.log(da)
