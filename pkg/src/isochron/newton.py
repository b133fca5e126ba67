"""Quasi-Newton iteration for the invariance equation ``f o W = W(a, lambda s)``.

One step computes the residual, moves it into the frame ``DW o (a, lambda s)``
(giving ``etilde``), and solves a set of scalar cohomological equations for the
corrections ``Gamma`` of ``W`` in the adapted frame and the corrections of the
internal dynamics ``a`` and the rates ``lambda``.  Every scalar equation has the
form ``c * G - m * G o a = rhs``; the contracting direction (forward along
``a`` or backward along ``a^-1``) is fixed by the order for the 2-D problem and
chosen from dynamical averages for the 3-D problem.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ._spline import PeriodicSpline
from .circlefn import CircleFunction, best_inverse, cr_norm
from .cohomology import solve_coho_batch
from .errors import (
    CohoNoConvergence,
    FrameDegeneracy,
    InversionFailure,
    MonotonicityError,
    ResonanceError,
    SolverDivergence,
    SolverNoConvergence,
    StepFailure,
)
from .taylorfield import (
    TaylorField,
    cauchy,
    compose_right,
    d_s,
    d_theta,
    resample_field,
    xr_delta_norm,
)

__all__ = [
    "Parameterization",
    "Parameterization3",
    "NewtonOptions",
    "StepStats",
    "residual",
    "residual_norms",
    "solution_norm",
    "etilde",
    "newton_step_2d",
    "newton_step_3d",
    "newton_step",
    "solve_invariance",
    "resample_parameterization",
]


@dataclass(frozen=True, eq=False)
class Parameterization:
    """Unknowns of the 2-D problem: embedding ``W = (W1, W2)``, map ``a``, rate ``lam``."""

    W: Tuple[TaylorField, TaylorField]
    a: CircleFunction
    lam: CircleFunction
    ainv: Optional[CircleFunction] = None

    @property
    def knots(self) -> np.ndarray:
        return self.a.knots

    @property
    def n(self) -> int:
        return self.a.n

    @property
    def L(self):
        return self.W[0].L

    @property
    def rates(self) -> Tuple[CircleFunction, ...]:
        return (self.lam,)

    def with_(self, **kw) -> "Parameterization":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class Parameterization3:
    """Unknowns of the 3-D problem with two normal rates ``lam1``, ``lam2``."""

    W: Tuple[TaylorField, TaylorField, TaylorField]
    a: CircleFunction
    lam1: CircleFunction
    lam2: CircleFunction
    ainv: Optional[CircleFunction] = None

    @property
    def knots(self) -> np.ndarray:
        return self.a.knots

    @property
    def n(self) -> int:
        return self.a.n

    @property
    def L(self):
        return self.W[0].L

    @property
    def rates(self) -> Tuple[CircleFunction, ...]:
        return (self.lam1, self.lam2)

    def with_(self, **kw) -> "Parameterization3":
        return replace(self, **kw)


@dataclass
class NewtonOptions:
    """Knobs of one quasi-Newton step.

    ``coho_rtol`` is relative to the sup-norm of each right-hand side; a solve
    that stalls above it is still accepted up to ``coho_accept_rtol``.
    """

    delta: float = 1e-3
    coho_rtol: float = 1e-12
    coho_accept_rtol: float = 1e-6
    coho_atol: float = 1e-15
    max_doublings: int = 10
    polish: int = 8
    frame_tol: float = 1e-10
    contraction_n: int = 64
    contraction_threshold: float = 0.98
    use_inverse_refinement: bool = True


@dataclass
class StepStats:
    """Log record of one iteration (``iteration == 0`` describes the initial guess)."""

    iteration: int
    residual: Tuple[float, float, float]
    residual_before: Optional[Tuple[float, float, float]] = None
    correction_a: float = 0.0
    correction_lam: float = 0.0
    correction_W: float = 0.0
    inverse_method: int = 0
    inverse_residual: float = 0.0
    coho_max_passes: int = 0
    coho_max_relres: float = 0.0
    elapsed: float = 0.0
    flags: List[str] = field(default_factory=list)


# residual and norms


def residual(fmap, P) -> Tuple[TaylorField, ...]:
    """``f o W - W(a, lambda s)`` componentwise (all components index 0)."""
    fW = fmap.apply_field(P.W)
    lam = P.lam if len(P.rates) == 1 else P.rates
    out = []
    for fi, Wi in zip(fW, P.W):
        comp = compose_right(Wi, P.a, lam)
        out.append(fi.replace(coeffs=fi.coeffs - comp.coeffs, index=fi.index - comp.index))
    return tuple(out)


def residual_norms(e: Sequence[TaylorField], delta: float = 1e-3) -> Tuple[float, float, float]:
    """X^{r,delta} norms for r = 0, 1, 2, maximized over components."""
    return tuple(max(xr_delta_norm(ei, r, delta) for ei in e) for r in range(3))


def solution_norm(P, delta: float = 1e-3, r: int = 0) -> float:
    """Max over the components of ``W`` of their X^{r,delta} norms."""
    return max(xr_delta_norm(Wi, r, delta) for Wi in P.W)


def _parameterization_size(P, delta: float) -> float:
    size = solution_norm(P, delta)
    size = max(size, cr_norm(P.a), *(cr_norm(l) for l in P.rates))
    return size


# frame algebra


def frame(P) -> List[List[TaylorField]]:
    """``DW`` as a dim x dim array of fields: column 0 is d/dtheta, then d/ds_k."""
    nv = P.W[0].nvars
    return [[d_theta(Wi)] + [d_s(Wi, v) for v in range(nv)] for Wi in P.W]


def composed_frame(P, DW=None) -> List[List[TaylorField]]:
    DW = DW if DW is not None else frame(P)
    lam = P.lam if len(P.rates) == 1 else P.rates
    return [[compose_right(c, P.a, lam) for c in row] for row in DW]


def _multi_indices(orders):
    """Multi-indices in graded order (all predecessors come first)."""
    if len(orders) == 1:
        return [(j,) for j in range(orders[0] + 1)]
    out = [(x, y) for x in range(orders[0] + 1) for y in range(orders[1] + 1)]
    return sorted(out, key=lambda t: (t[0] + t[1], t[0]))


def etilde(B: List[List[TaylorField]], e: Sequence[TaylorField], frame_tol: float = 1e-10):
    """Solve ``B etilde = -e`` order by order for coefficient stacks.

    Parameters
    ----------
    B : dim x dim nested list of TaylorField
        The frame composed with the internal dynamics.
    e : sequence of TaylorField
        Residual components.

    Raises
    ------
    FrameDegeneracy
        The order-zero frame is numerically singular at some knot.
    """
    dim = len(e)
    Bc = np.stack([np.stack([b.coeffs for b in row]) for row in B])  # (dim, dim) + O + (N,)
    ec = np.stack([ei.coeffs for ei in e])  # (dim,) + O + (N,)
    zero = (0,) * (ec.ndim - 2)
    B0 = np.moveaxis(Bc[(slice(None), slice(None)) + zero], -1, 0)  # (N, dim, dim)
    det = np.linalg.det(B0)
    scale = np.prod(np.max(np.abs(B0), axis=2), axis=1)
    if np.any(np.abs(det) <= frame_tol * scale) or not np.all(np.isfinite(det)):
        raise FrameDegeneracy(
            f"frame determinant {float(np.min(np.abs(det))):.3e} below threshold"
        )
    B0inv = np.linalg.inv(B0)  # (N, dim, dim)
    out = np.zeros_like(ec)
    orders = tuple(n - 1 for n in ec.shape[1:-1])
    for alpha in _multi_indices(orders):
        rhs = -ec[(slice(None),) + alpha].copy()  # (dim, N)
        for beta in _multi_indices(orders):
            if beta == zero or any(b > a for b, a in zip(beta, alpha)):
                continue
            rest = tuple(a - b for a, b in zip(alpha, beta))
            rhs -= np.einsum("ikn,kn->in", Bc[(slice(None), slice(None)) + beta], out[(slice(None),) + rest])
        out[(slice(None),) + alpha] = np.einsum("nik,kn->in", B0inv, rhs)
    return tuple(ei.replace(coeffs=out[i], index=0) for i, ei in enumerate(e))


# scalar equations c G - m G o a = rhs


@dataclass
class _Equation:
    slot: tuple  # index into the Gamma stack
    c: np.ndarray
    m: np.ndarray
    rhs: np.ndarray
    direction: str = "forward"


def _solve_equations(eqs: List[_Equation], a: CircleFunction, ainv: CircleFunction, opts, diag):
    """Solve every equation, batching the forward and the backward ones."""
    results = {}
    for direction in ("forward", "reversed"):
        group = [q for q in eqs if q.direction == direction]
        if not group:
            continue
        if direction == "forward":
            l = np.stack([q.m / q.c for q in group])
            eta = np.stack([q.rhs / q.c for q in group])
            amap = a
        else:
            # G = (c/m) o ainv * G o ainv - (rhs/m) o ainv
            l0 = np.stack([q.c / q.m for q in group])
            r0 = np.stack([q.rhs / q.m for q in group])
            sp = PeriodicSpline(a.knots, np.concatenate([l0, r0]), a.spline_order)
            vals = sp(ainv.values)
            l = vals[: len(group)]
            eta = -vals[len(group) :]
            amap = ainv
        scale = np.max(np.abs(eta), axis=-1)
        tol = opts.coho_rtol * scale + opts.coho_atol
        try:
            res = solve_coho_batch(l, amap, eta, tol, opts.max_doublings, opts.polish)
            phi, resid, passes = res.phi, res.residual, res.passes
        except CohoNoConvergence as exc:
            sol = exc.solution
            rel = sol.residual / np.maximum(scale, 1e-300)
            if np.any(sol.residual > opts.coho_accept_rtol * scale + opts.coho_atol):
                raise StepFailure(
                    f"cohomological equation failed ({direction}), relative residual {float(np.max(rel)):.3e}",
                    {"relative_residual": float(np.max(rel))},
                ) from exc
            phi, resid, passes = sol.phi, sol.residual, sol.passes
            diag["flags"].append("coho-accepted-above-tolerance")
        rel = resid / np.maximum(scale, 1e-300)
        diag["coho_max_passes"] = max(diag["coho_max_passes"], passes)
        diag["coho_max_relres"] = max(diag["coho_max_relres"], float(np.max(rel)))
        for q, row in zip(group, phi):
            results[q.slot] = row
    return results


def _choose_directions(eqs: List[_Equation], a, ainv, opts):
    """Mark each equation forward or reversed using dynamical averages over ``n`` steps."""
    n = opts.contraction_n
    fwd = np.stack([np.log(np.abs(q.m / q.c)) for q in eqs])
    bwd = np.stack([np.log(np.abs(q.c / q.m)) for q in eqs])
    sp = PeriodicSpline(a.knots, np.concatenate([fwd, bwd]), a.spline_order)
    spa, spi = a.spline, ainv.spline
    x = a.knots.copy()
    y = a.knots.copy()
    k = len(eqs)
    sf = np.zeros((k, a.n))
    sb = np.zeros((k, a.n))
    for _ in range(n):
        sf += sp(x)[:k]
        y = y + spi(y)
        sb += sp(y)[k:]  # backward cocycle samples (c/m) o ainv^j
        x = x + spa(x)
    avg_f = np.exp(np.max(sf, axis=1) / n)
    avg_b = np.exp(np.max(sb, axis=1) / n)
    thr = opts.contraction_threshold
    for q, af, ab in zip(eqs, avg_f, avg_b):
        if af < thr:
            q.direction = "forward"
        elif ab < thr:
            q.direction = "reversed"
        else:
            raise ResonanceError(
                f"order {q.slot}: neither direction contracts (forward {af:.4f}, backward {ab:.4f})"
            )


def _apply_frame(DW, gamma: np.ndarray, W: Sequence[TaylorField]):
    """``Delta_W = DW * Gamma`` with truncated products; ``gamma`` has shape (dim,) + O + (N,)."""
    out = []
    for i, row in enumerate(DW):
        acc = np.zeros_like(W[i].coeffs)
        for k, col in enumerate(row):
            acc += cauchy(col.coeffs, gamma[k])
        out.append(acc)
    return out


def _update_map(P, da: np.ndarray, opts, diag):
    a_new = P.a.with_values(P.a.values + da)
    d = np.diff(np.append(a_new.values, a_new.values[0] + 1.0))
    if np.any(d <= 0.0):
        raise StepFailure("updated internal dynamics is not monotone", {"min_gap": float(d.min())})
    prev = P.ainv if opts.use_inverse_refinement else None
    try:
        ainv, method, ires = best_inverse(a_new, prev, return_method=True)
    except (InversionFailure, MonotonicityError) as exc:
        raise StepFailure(f"inverse of the updated map failed: {exc}") from exc
    diag["inverse_method"] = method
    diag["inverse_residual"] = ires
    return a_new, ainv


def _ensure_inverse(P):
    if P.ainv is None:
        return P.with_(ainv=best_inverse(P.a))
    return P


def newton_step_2d(fmap, P: Parameterization, opts: Optional[NewtonOptions] = None, e=None):
    """One quasi-Newton step for the 2-D invariance equation.

    Returns the corrected parameterization and a :class:`StepStats` whose
    ``residual_before`` is filled (``residual`` is left for the caller).
    """
    opts = opts or NewtonOptions()
    t0 = time.perf_counter()
    P = _ensure_inverse(P)
    diag = {"flags": [], "coho_max_passes": 0, "coho_max_relres": 0.0}
    if e is None:
        e = residual(fmap, P)
    before = residual_norms(e, opts.delta)
    L = P.W[0].orders[0]
    DW = frame(P)
    B = composed_frame(P, DW)
    try:
        et = etilde(B, e, opts.frame_tol)
    except FrameDegeneracy as exc:
        raise StepFailure(str(exc), {"cause": "frame"}) from exc
    e1 = et[0].coeffs
    e2 = et[1].coeffs
    lam = P.lam.values
    Da = P.a.spline(P.a.knots, 1) + 1.0
    Dlam = P.lam.spline(P.lam.knots, 1)
    gamma = np.zeros((2, L + 1, P.n))
    da = -e1[0]
    lam_pows = lam[None, :] ** np.arange(L + 1)[:, None]
    # Gamma_1, orders 1..L
    eqs = [_Equation((0, j), Da, lam_pows[j], e1[j]) for j in range(1, L + 1)]
    sol = _solve_equations(eqs, P.a, P.ainv, opts, diag)
    for slot, v in sol.items():
        gamma[slot] = v
    M = e2.copy()
    M[1:] -= Dlam * gamma[0, :-1]
    dlam = -M[1] if L >= 1 else np.zeros(P.n)
    one = np.ones(P.n)
    eqs = [_Equation((1, 0), lam, one, M[0], "reversed")]
    eqs += [_Equation((1, j), lam, lam_pows[j], M[j]) for j in range(2, L + 1)]
    sol = _solve_equations(eqs, P.a, P.ainv, opts, diag)
    for slot, v in sol.items():
        gamma[slot] = v
    dW = _apply_frame(DW, gamma, P.W)
    W_new = tuple(Wi.replace(coeffs=Wi.coeffs + d) for Wi, d in zip(P.W, dW))
    a_new, ainv = _update_map(P, da, opts, diag)
    lam_new = P.lam.with_values(lam + dlam)
    P_new = Parameterization(W_new, a_new, lam_new, ainv)
    stats = StepStats(
        iteration=0,
        residual=(math.nan,) * 3,
        residual_before=before,
        correction_a=float(np.max(np.abs(da))),
        correction_lam=float(np.max(np.abs(dlam))),
        correction_W=float(max(np.max(np.abs(d)) for d in dW)),
        inverse_method=diag.get("inverse_method", 0),
        inverse_residual=diag.get("inverse_residual", 0.0),
        coho_max_passes=diag["coho_max_passes"],
        coho_max_relres=diag["coho_max_relres"],
        elapsed=time.perf_counter() - t0,
        flags=diag["flags"],
    )
    return P_new, stats


def newton_step_3d(fmap, P: Parameterization3, opts: Optional[NewtonOptions] = None, e=None):
    """One quasi-Newton step for the 3-D invariance equation with two normal rates."""
    opts = opts or NewtonOptions()
    t0 = time.perf_counter()
    P = _ensure_inverse(P)
    diag = {"flags": [], "coho_max_passes": 0, "coho_max_relres": 0.0}
    if e is None:
        e = residual(fmap, P)
    before = residual_norms(e, opts.delta)
    L1, L2 = P.W[0].orders
    DW = frame(P)
    B = composed_frame(P, DW)
    try:
        et = etilde(B, e, opts.frame_tol)
    except FrameDegeneracy as exc:
        raise StepFailure(str(exc), {"cause": "frame"}) from exc
    e1, e2, e3 = (x.coeffs for x in et)
    l1, l2 = P.lam1.values, P.lam2.values
    Da = P.a.spline(P.a.knots, 1) + 1.0
    Dl1 = P.lam1.spline(P.knots, 1)
    Dl2 = P.lam2.spline(P.knots, 1)
    pw1 = l1[None, :] ** np.arange(L1 + 1)[:, None]
    pw2 = l2[None, :] ** np.arange(L2 + 1)[:, None]
    gamma = np.zeros((3, L1 + 1, L2 + 1, P.n))
    da = -e1[0, 0]
    idx = [(x, y) for x in range(L1 + 1) for y in range(L2 + 1)]
    try:
        eqs = [_Equation((0, x, y), Da, pw1[x] * pw2[y], e1[x, y]) for (x, y) in idx if (x, y) != (0, 0)]
        if eqs:
            _choose_directions(eqs, P.a, P.ainv, opts)
            for slot, v in _solve_equations(eqs, P.a, P.ainv, opts, diag).items():
                gamma[slot] = v
        M2 = e2.copy()
        M2[1:] -= Dl1 * gamma[0, :-1]
        M3 = e3.copy()
        M3[:, 1:] -= Dl2 * gamma[0, :, :-1]
        dl1 = -M2[1, 0] if L1 >= 1 else np.zeros(P.n)
        dl2 = -M3[0, 1] if L2 >= 1 else np.zeros(P.n)
        eqs = []
        for x, y in idx:
            m = pw1[x] * pw2[y]
            if (x, y) != (1, 0):
                eqs.append(_Equation((1, x, y), l1, m, M2[x, y]))
            if (x, y) != (0, 1):
                eqs.append(_Equation((2, x, y), l2, m, M3[x, y]))
        _choose_directions(eqs, P.a, P.ainv, opts)
        for slot, v in _solve_equations(eqs, P.a, P.ainv, opts, diag).items():
            gamma[slot] = v
    except ResonanceError:
        raise
    dW = _apply_frame(DW, gamma, P.W)
    W_new = tuple(Wi.replace(coeffs=Wi.coeffs + d) for Wi, d in zip(P.W, dW))
    a_new, ainv = _update_map(P, da, opts, diag)
    P_new = Parameterization3(
        W_new, a_new, P.lam1.with_values(l1 + dl1), P.lam2.with_values(l2 + dl2), ainv
    )
    stats = StepStats(
        iteration=0,
        residual=(math.nan,) * 3,
        residual_before=before,
        correction_a=float(np.max(np.abs(da))),
        correction_lam=float(max(np.max(np.abs(dl1)), np.max(np.abs(dl2)))),
        correction_W=float(max(np.max(np.abs(d)) for d in dW)),
        inverse_method=diag.get("inverse_method", 0),
        inverse_residual=diag.get("inverse_residual", 0.0),
        coho_max_passes=diag["coho_max_passes"],
        coho_max_relres=diag["coho_max_relres"],
        elapsed=time.perf_counter() - t0,
        flags=diag["flags"],
    )
    return P_new, stats


def newton_step(fmap, P, opts=None, e=None):
    if isinstance(P, Parameterization3):
        return newton_step_3d(fmap, P, opts, e)
    return newton_step_2d(fmap, P, opts, e)


def solve_invariance(
    fmap,
    P0,
    tol: float = 1e-14,
    maxit: int = 20,
    opts: Optional[NewtonOptions] = None,
    divergence_cap: float = 1e3,
    stall_steps: int = 3,
):
    """Iterate quasi-Newton steps until the X^{0,delta} residual is at most ``tol``.

    Returns
    -------
    P : Parameterization or Parameterization3
    history : list of StepStats
        ``history[0]`` holds the residual of ``P0``; ``history[n]`` the residual
        after ``n`` steps.

    Raises
    ------
    SolverDivergence
        The size of the unknowns exceeded ``divergence_cap``.
    SolverNoConvergence
        ``maxit`` reached, or the residual failed to halve for ``stall_steps``
        consecutive steps while above ``tol``.
    StepFailure
        Propagated from a step (the history is attached to its diagnostics).
    """
    opts = opts or NewtonOptions()
    P = _ensure_inverse(P0)
    e = residual(fmap, P)
    norms = residual_norms(e, opts.delta)
    history = [StepStats(iteration=0, residual=norms)]
    best = (norms[0], P)
    stalled = 0
    for it in range(1, maxit + 1):
        if norms[0] <= tol:
            return P, history
        try:
            P_new, stats = newton_step(fmap, P, opts, e)
        except StepFailure as exc:
            exc.diagnostics["history"] = history
            raise
        size = _parameterization_size(P_new, opts.delta)
        e_new = residual(fmap, P_new)
        new_norms = residual_norms(e_new, opts.delta)
        stats.iteration = it
        stats.residual = new_norms
        history.append(stats)
        if not np.isfinite(size) or size > divergence_cap or not np.isfinite(new_norms[0]):
            raise SolverDivergence(f"iterate size {size:.3e} exceeds cap {divergence_cap:g}", history)
        if new_norms[0] > 0.5 * norms[0]:
            stalled += 1
            stats.flags.append("sublinear")
        else:
            stalled = 0
        P, e, norms = P_new, e_new, new_norms
        if norms[0] < best[0]:
            best = (norms[0], P)
        if norms[0] <= tol:
            return P, history
        if stalled >= stall_steps:
            raise SolverNoConvergence(
                f"residual stalled at {norms[0]:.3e} for {stalled} steps", history, best[1]
            )
    if norms[0] <= tol:
        return P, history
    raise SolverNoConvergence(f"no convergence in {maxit} steps (residual {norms[0]:.3e})", history, best[1])


def resample_parameterization(P, new_knots):
    """Move every component of ``P`` onto a new knot vector; the inverse is recomputed."""
    from .circlefn import resample

    W = tuple(resample_field(Wi, new_knots) for Wi in P.W)
    a = resample(P.a, new_knots)
    rates = [resample(l, new_knots) for l in P.rates]
    ainv = best_inverse(a, resample(P.ainv, new_knots) if P.ainv is not None else None)
    if isinstance(P, Parameterization3):
        return Parameterization3(W, a, rates[0], rates[1], ainv)
    return Parameterization(W, a, rates[0], ainv)
