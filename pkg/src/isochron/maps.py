"""Map families: the dissipative standard map and the 3-D fattened Arnold family.

Each family is a small object exposing the point action, the action on a tuple
of :class:`TaylorField` components, the Jacobian at points, the analytic
inverse and the derivative with respect to its parameters.  Points are arrays
whose leading axis holds the coordinates ``(theta, p)`` or ``(x, y, z)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Dict, Sequence, Tuple

import numpy as np

from .circlefn import CircleFunction, uniform_knots
from .errors import ConfigError
from .taylorfield import TaylorField, compose_left_sin
from .newton import Parameterization, Parameterization3

__all__ = [
    "DstParams",
    "Faf3Params",
    "DstMap",
    "Faf3Map",
    "dst_apply",
    "dst_inverse",
    "dst_apply_field",
    "dst_jacobian",
    "faf3_apply",
    "faf3_inverse",
    "faf3_apply_field",
    "faf3_jacobian",
    "exact_solution_dst_k0",
    "exact_solution_faf3_eps0",
    "make_map",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class DstParams:
    k: float
    gamma: float
    eta: float

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")


@dataclass(frozen=True)
class Faf3Params:
    alpha: float
    eps: float
    beta: float
    gamma: float

    def __post_init__(self):
        if self.beta == 0.0 or self.gamma == 0.0:
            raise ConfigError("beta and gamma must be nonzero")
        if abs(abs(self.beta) - abs(self.gamma)) < 1e-12:
            raise ConfigError("|beta| == |gamma| is resonant")


# dissipative standard map


def dst_apply(p: DstParams, point) -> np.ndarray:
    theta, mom = np.asarray(point, dtype=float)
    mom1 = p.gamma * mom + p.gamma * p.k * np.sin(TWO_PI * theta) / TWO_PI
    return np.array([theta + mom1 + p.eta, mom1])


def dst_inverse(p: DstParams, point) -> np.ndarray:
    theta1, mom1 = np.asarray(point, dtype=float)
    theta = theta1 - mom1 - p.eta
    mom = mom1 / p.gamma - p.k * np.sin(TWO_PI * theta) / TWO_PI
    return np.array([theta, mom])


def dst_jacobian(p: DstParams, point) -> np.ndarray:
    """Jacobian with shape ``(2, 2) + point_shape``."""
    theta = np.asarray(point, dtype=float)[0]
    kick = p.gamma * p.k * np.cos(TWO_PI * theta)
    one = np.ones_like(theta)
    return np.array([[one + kick, p.gamma * one], [kick, p.gamma * one]])


def dst_apply_field(p: DstParams, W: Sequence[TaylorField]) -> Tuple[TaylorField, TaylorField]:
    W1, W2 = W
    S, _ = compose_left_sin(W1)
    mom = W2.replace(coeffs=p.gamma * W2.coeffs + (p.gamma * p.k / TWO_PI) * S.coeffs)
    theta = W1.replace(coeffs=W1.coeffs + mom.coeffs)
    theta = theta.replace(coeffs=_shift_const(theta.coeffs, p.eta))
    return theta, mom


def _shift_const(c: np.ndarray, value: float) -> np.ndarray:
    c = c.copy()
    c[(0,) * (c.ndim - 1)] += value
    return c


def exact_solution_dst_k0(p: DstParams, n: int = 1024, L: int = 10, spline_order: int = 3):
    """Exact invariant circle and stable foliation of the unperturbed map.

    With ``k = 0`` the map is affine: ``W = (theta + gamma/(gamma-1) s, s)``,
    ``a = theta + eta``, ``lambda = gamma`` solves the invariance equation.
    """
    knots = uniform_knots(n)
    W1 = TaylorField.zeros(knots, L, 1, spline_order)
    W2 = TaylorField.zeros(knots, L, 0, spline_order)
    c1 = W1.coeffs.copy()
    c2 = W2.coeffs.copy()
    if L >= 1:
        c1[1] = p.gamma / (p.gamma - 1.0)
        c2[1] = 1.0
    a = CircleFunction.rotation(p.eta, knots, spline_order)
    lam = CircleFunction.constant(p.gamma, knots, spline_order)
    return Parameterization(
        (W1.replace(coeffs=c1), W2.replace(coeffs=c2)),
        a,
        lam,
        CircleFunction.rotation(-p.eta, knots, spline_order),
    )


# 3-D fattened Arnold family


def faf3_apply(p: Faf3Params, point) -> np.ndarray:
    x, y, z = np.asarray(point, dtype=float)
    sx = np.sin(TWO_PI * x)
    return np.array(
        [
            x + p.alpha + p.eps / TWO_PI * (sx + y + 0.5 * z),
            p.beta * (sx + y),
            p.gamma * (sx + y + z),
        ]
    )


def faf3_inverse(p: Faf3Params, point) -> np.ndarray:
    x1, y1, z1 = np.asarray(point, dtype=float)
    u = y1 / p.beta  # sin(2 pi x) + y
    z = z1 / p.gamma - u
    x = x1 - p.alpha - p.eps / TWO_PI * (u + 0.5 * z)
    y = u - np.sin(TWO_PI * x)
    return np.array([x, y, z])


def faf3_jacobian(p: Faf3Params, point) -> np.ndarray:
    x = np.asarray(point, dtype=float)[0]
    c = TWO_PI * np.cos(TWO_PI * x)
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    return np.array(
        [
            [one + p.eps / TWO_PI * c, p.eps / TWO_PI * one, p.eps / (2.0 * TWO_PI) * one],
            [p.beta * c, p.beta * one, zero],
            [p.gamma * c, p.gamma * one, p.gamma * one],
        ]
    )


def faf3_apply_field(p: Faf3Params, W: Sequence[TaylorField]):
    W1, W2, W3 = W
    S, _ = compose_left_sin(W1)
    kick = S.coeffs + W2.coeffs
    x = W1.replace(coeffs=_shift_const(W1.coeffs + p.eps / TWO_PI * (kick + 0.5 * W3.coeffs), p.alpha))
    y = W2.replace(coeffs=p.beta * kick)
    z = W3.replace(coeffs=p.gamma * (kick + W3.coeffs))
    return x, y, z


def faf3_circle_coefficients(p: Faf3Params):
    """Complex Fourier coefficients ``(G, H)`` of the unperturbed invariant circle.

    The circle is ``y = Im(G e(theta))``, ``z = Im(H e(theta))`` with
    ``e(theta) = exp(2 pi i theta)``; matching the single harmonic in
    ``g(theta + alpha) = beta (sin + g)`` and ``h(theta + alpha) = gamma (sin + g + h)``
    gives the two linear equations solved here.
    """
    rot = np.exp(2j * np.pi * p.alpha)
    G = p.beta / (rot - p.beta)
    H = p.gamma * (1.0 + G) / (rot - p.gamma)
    return G, H


def exact_solution_faf3_eps0(p: Faf3Params, n: int = 1024, L=(3, 3), spline_order: int = 3):
    """Exact solution of the 3-D invariance equation for ``eps = 0``."""
    knots = uniform_knots(n)
    L = (L, L) if np.isscalar(L) else tuple(L)
    G, H = faf3_circle_coefficients(p)
    e = np.exp(2j * np.pi * knots)
    W1 = TaylorField.zeros(knots, L, 1, spline_order)
    c2 = np.zeros(W1.coeffs.shape)
    c3 = np.zeros(W1.coeffs.shape)
    c2[0, 0] = np.imag(G * e)
    c3[0, 0] = np.imag(H * e)
    if L[0] >= 1:
        c2[1, 0] = 1.0
        c3[1, 0] = p.gamma / (p.beta - p.gamma)
    if L[1] >= 1:
        c3[0, 1] = 1.0
    a = CircleFunction.rotation(p.alpha, knots, spline_order)
    return Parameterization3(
        (W1, W1.replace(coeffs=c2, index=0), W1.replace(coeffs=c3, index=0)),
        a,
        CircleFunction.constant(p.beta, knots, spline_order),
        CircleFunction.constant(p.gamma, knots, spline_order),
        CircleFunction.rotation(-p.alpha, knots, spline_order),
    )


def faf3_closed_form_circle(p: Faf3Params, theta):
    """Trigonometric closed form of the unperturbed circle written with the S, C helpers.

    Only the ``y`` component of this form satisfies the invariance equation;
    the ``z`` component is kept for comparison and is not used by the solver.
    """

    def S(x, y):
        return y * np.sin(TWO_PI * x) / (1.0 - 2.0 * y * np.cos(TWO_PI * x) + y * y)

    def C(x, y):
        return (1.0 - y * np.cos(TWO_PI * x)) / (1.0 - 2.0 * y * np.cos(TWO_PI * x) + y * y)

    a, b, g = p.alpha, p.beta, p.gamma
    theta = np.asarray(theta, dtype=float)
    cs, sn = np.cos(TWO_PI * theta), np.sin(TWO_PI * theta)
    y = -S(a, b) * cs + (C(a, b) - 1.0) * sn
    z = (g / b) * (S(a, b) * (C(-a, 1 / g) - 1.0) + (C(a, b) - 1.0) * S(-a, 1 / g)) * cs + (g / b) * (
        (C(a, b) - 1.0) * (C(-a, 1 / g) - 1.0) - S(a, b) * S(-a, 1 / g)
    ) * sn
    return y, z


# map objects used by the solvers


class DstMap:
    """Dissipative standard map ``f_{eta, gamma, k}``."""

    dim = 2
    param_names = ("k", "gamma", "eta")

    def __init__(self, params: DstParams):
        self.params = params

    def with_params(self, **kw) -> "DstMap":
        return DstMap(replace(self.params, **kw))

    def param_dict(self) -> Dict[str, float]:
        return asdict(self.params)

    def apply(self, point):
        return dst_apply(self.params, point)

    def inverse(self, point):
        return dst_inverse(self.params, point)

    def jacobian(self, point):
        return dst_jacobian(self.params, point)

    def apply_field(self, W):
        return dst_apply_field(self.params, W)

    def param_derivative_field(self, W, dparams: Dict[str, float]):
        """Directional derivative ``sum_i dparams[i] * df/dparam_i`` evaluated on ``W``."""
        p = self.params
        W1, W2 = W
        S, _ = compose_left_sin(W1)
        dmom = np.zeros_like(W2.coeffs)
        dth = np.zeros_like(W1.coeffs)
        dk = dparams.get("k", 0.0)
        dg = dparams.get("gamma", 0.0)
        de = dparams.get("eta", 0.0)
        if dk:
            dmom = dmom + dk * p.gamma * S.coeffs / TWO_PI
        if dg:
            dmom = dmom + dg * (W2.coeffs + p.k * S.coeffs / TWO_PI)
        dth = dth + dmom
        if de:
            dth = _shift_const(dth, de)
        return W1.replace(coeffs=dth, index=0), W2.replace(coeffs=dmom)

    def exact_seed(self, n=1024, L=10, spline_order=3):
        return exact_solution_dst_k0(self.params, n, L, spline_order)


class Faf3Map:
    """3-D fattened Arnold family."""

    dim = 3
    param_names = ("alpha", "eps", "beta", "gamma")

    def __init__(self, params: Faf3Params):
        self.params = params

    def with_params(self, **kw) -> "Faf3Map":
        return Faf3Map(replace(self.params, **kw))

    def param_dict(self) -> Dict[str, float]:
        return asdict(self.params)

    def apply(self, point):
        return faf3_apply(self.params, point)

    def inverse(self, point):
        return faf3_inverse(self.params, point)

    def jacobian(self, point):
        return faf3_jacobian(self.params, point)

    def apply_field(self, W):
        return faf3_apply_field(self.params, W)

    def param_derivative_field(self, W, dparams: Dict[str, float]):
        p = self.params
        W1, W2, W3 = W
        S, _ = compose_left_sin(W1)
        kick = S.coeffs + W2.coeffs
        dx = dparams.get("eps", 0.0) / TWO_PI * (kick + 0.5 * W3.coeffs)
        dx = _shift_const(dx, dparams.get("alpha", 0.0))
        dy = dparams.get("beta", 0.0) * kick
        dz = dparams.get("gamma", 0.0) * (kick + W3.coeffs)
        return W1.replace(coeffs=dx, index=0), W2.replace(coeffs=dy), W3.replace(coeffs=dz)

    def exact_seed(self, n=1024, L=(3, 3), spline_order=3):
        return exact_solution_faf3_eps0(self.params, n, L, spline_order)


def make_map(family: str, params: Dict[str, float]):
    family = family.lower()
    try:
        if family == "dst":
            return DstMap(DstParams(**params))
        if family == "faf3":
            return Faf3Map(Faf3Params(**params))
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {family}: {exc}") from None
    raise ConfigError(f"unknown map family {family!r}")
