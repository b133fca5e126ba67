from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from isochron.circlefn import CircleFunction, uniform_knots
from isochron.errors import GridMismatch
from isochron.taylorfield import (
    TaylorField,
    compose_left_sin,
    compose_right,
    d_s,
    field_add,
    field_eval,
    field_mul,
    read_field_csv,
    rescale_s,
    resample_field,
    write_field_csv,
    xr_delta_norm,
)

TWO_PI = 2 * np.pi
N = 64


def random_field(seed, L=5, n=N, index=0, scale=1.0, decay=0.7):
    rng = np.random.default_rng(seed)
    knots = uniform_knots(n)
    modes = np.arange(1, 4)
    c = np.zeros((L + 1, n))
    for j in range(L + 1):
        amp = rng.normal(size=(3, 2)) * decay**j
        c[j] = rng.normal() * decay**j + sum(
            amp[m - 1, 0] * np.cos(TWO_PI * m * knots) + amp[m - 1, 1] * np.sin(TWO_PI * m * knots) for m in modes
        )
    if index:
        c[0] += knots
    return TaylorField(knots, c, index, 3, scale)


def monomial(j, L=5, n=N, value=1.0, scale=1.0):
    u = TaylorField.zeros(uniform_knots(n), L, scale=scale)
    c = u.coeffs.copy()
    c[j] = value
    return u.replace(coeffs=c)


def test_mul_by_one():
    u = random_field(1)
    assert np.array_equal(field_mul(u, monomial(0)).coeffs, u.coeffs)


def test_s_times_s():
    w = field_mul(monomial(1), monomial(1))
    assert np.all(w.coeffs[2] == 1.0)
    assert np.all(w.coeffs[[0, 1, 3, 4, 5]] == 0.0)


def test_mul_matches_pointwise_product():
    u, v = random_field(2), random_field(3)
    w = field_mul(u, v)
    rng = np.random.default_rng(0)
    # angles on knots so that only the truncation in s is measured
    th = u.knots[rng.integers(0, N, 20)]
    s = rng.uniform(-1e-2, 1e-2, 20)
    exact = field_eval(u, th, s) * field_eval(v, th, s)
    # truncation drops terms of order s^(L+1)
    assert np.max(np.abs(field_eval(w, th, s) - exact)) <= 50 * 1e-2**6


@given(st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000))
def test_mul_commutative_associative_exact_coefficients(a, b, c):
    u, v, w = random_field(a), random_field(b), random_field(c)
    assert np.allclose(field_mul(u, v).coeffs, field_mul(v, u).coeffs, rtol=0, atol=1e-13)
    lhs = field_mul(field_mul(u, v), w).coeffs
    rhs = field_mul(u, field_mul(v, w)).coeffs
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_grid_mismatch():
    with pytest.raises(GridMismatch):
        field_add(random_field(1), random_field(2, n=32))


def test_left_sin_of_angle_only():
    u = TaylorField.from_circle(CircleFunction.identity(N), 4)
    S, C = compose_left_sin(u)
    assert np.allclose(S.coeffs[0], np.sin(TWO_PI * u.knots), atol=1e-14)
    assert np.all(S.coeffs[1:] == 0.0) and np.all(C.coeffs[1:] == 0.0)


def test_left_sin_of_theta_plus_s():
    u = field_add(TaylorField.from_circle(CircleFunction.identity(N), 4), monomial(1, 4))
    S, _ = compose_left_sin(u, two_pi=False)
    assert np.allclose(S.coeffs[1], np.cos(u.knots), atol=1e-14)


@given(st.integers(0, 1000))
def test_pythagorean_identity(seed):
    u = random_field(seed, index=1)
    S, C = compose_left_sin(u)
    one = field_add(field_mul(S, S), field_mul(C, C))
    target = np.zeros_like(one.coeffs)
    target[0] = 1.0
    assert np.max(np.abs(one.coeffs - target)) <= 1e-9 * max(1.0, np.max(np.abs(u.coeffs)) ** 6)


@given(st.integers(0, 1000))
def test_left_sin_recurrence_identities(seed):
    # d/ds S = C d/ds u and d/ds C = -S d/ds u, order by order up to L-1
    u = random_field(seed, index=1)
    S, C = compose_left_sin(u, two_pi=False)
    du = d_s(u)
    L = u.orders[0]
    assert np.allclose(d_s(S).coeffs[:L], field_mul(C, du).coeffs[:L], atol=1e-10)
    assert np.allclose(d_s(C).coeffs[:L], -field_mul(S, du).coeffs[:L], atol=1e-10)


def test_compose_right_trivial_cases():
    u = random_field(4)
    ident = CircleFunction.identity(N)
    assert np.allclose(compose_right(u, ident, CircleFunction.constant(1.0, N)).coeffs, u.coeffs, atol=1e-15)
    w = compose_right(monomial(1), ident, CircleFunction.constant(0.5, N))
    assert np.allclose(w.coeffs[1], 0.5) and np.allclose(np.delete(w.coeffs, 1, axis=0), 0.0)


def test_compose_right_matches_pointwise():
    n = 512
    u = random_field(5, n=n, index=1)
    a = CircleFunction.from_callable(lambda x: x + 0.3 + 0.05 * np.sin(TWO_PI * x), n, 1)
    lam = CircleFunction.from_callable(lambda x: 0.5 + 0.1 * np.cos(TWO_PI * x), n)
    w = compose_right(u, a, lam)
    s = 0.01
    direct = field_eval(u, a.values, lam.values * s)
    assert np.max(np.abs(field_eval(w, a.knots, s) - direct)) <= 1e-12


@given(st.integers(0, 1000), st.integers(0, 1000))
def test_compose_right_distributes_over_add(a_seed, b_seed):
    u, v = random_field(a_seed), random_field(b_seed)
    a = CircleFunction.from_callable(lambda x: x + 0.2 + 0.03 * np.sin(TWO_PI * x), N, 1)
    lam = CircleFunction.constant(0.4, N)
    lhs = compose_right(field_add(u, v), a, lam).coeffs
    rhs = field_add(compose_right(u, a, lam), compose_right(v, a, lam)).coeffs
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-13)


def test_norm_examples():
    c = TaylorField.from_circle(CircleFunction.constant(-3.0, N), 4)
    assert xr_delta_norm(c, 0, 1e-3) == 3.0
    assert xr_delta_norm(monomial(1), 0, 1e-3) == pytest.approx(1e-3, rel=1e-15)


@given(st.integers(0, 1000), st.integers(0, 1000), st.sampled_from([0, 1, 2]))
def test_norm_triangle_inequality(a, b, r):
    u, v = random_field(a), random_field(b)
    assert xr_delta_norm(field_add(u, v), r) <= xr_delta_norm(u, r) + xr_delta_norm(v, r) * (1 + 1e-14)


def test_rescale_identity_and_pointwise():
    u = random_field(6, index=1, scale=1.0)
    assert np.array_equal(rescale_s(u, 1.0).coeffs, u.coeffs)
    v = rescale_s(u, 7.5)
    rng = np.random.default_rng(1)
    th, s = rng.random(10), rng.uniform(-0.05, 0.05, 10)
    assert np.allclose(field_eval(v, th, s), field_eval(u, th, s), atol=1e-13)


def test_rescale_equalizes_coefficients():
    # coefficients growing like 10^j become O(1) after rescaling by b = 10
    c = np.array([10.0**j * np.ones(N) for j in range(6)])
    u = TaylorField(uniform_knots(N), c)
    spread = lambda w: np.ptp(np.log10(np.max(np.abs(w.coeffs), axis=1)))  # noqa: E731
    assert spread(rescale_s(u, 10.0)) < 1e-12 < spread(u)


def test_eval_examples():
    u = random_field(7)
    th = np.linspace(0, 1, 9)
    assert np.allclose(field_eval(u, th, 0.0), u.coeff(0)(th), atol=1e-15)
    g = 0.5
    w = monomial(1, value=g / (g - 1))
    assert field_eval(w, 0.3, 0.001) == pytest.approx(-0.001, abs=1e-16)


def test_eval_matches_naive_sum():
    u = random_field(8, scale=3.0)
    rng = np.random.default_rng(2)
    for th, s in zip(rng.random(10), rng.uniform(-0.1, 0.1, 10)):
        naive = sum(u.coeff(j)(th) * (3.0 * s) ** j for j in range(6))
        assert field_eval(u, th, s) == pytest.approx(naive, abs=1e-13)


def test_two_variable_eval_and_mul():
    knots = uniform_knots(N)
    u = TaylorField.zeros(knots, (2, 2))
    c = u.coeffs.copy()
    c[1, 0] = 1.0  # s1
    c[0, 1] = 2.0  # 2 s2
    u = u.replace(coeffs=c)
    w = field_mul(u, u)
    # truncation keeps x <= 2, y <= 2: (s1 + 2 s2)^2 has all terms inside
    assert field_eval(w, 0.2, (0.1, 0.3)) == pytest.approx(0.49, abs=1e-14)


def test_resample_field_keeps_index_and_values():
    u = random_field(9, index=1)
    v = resample_field(u, uniform_knots(2 * N))
    assert v.index == 1
    assert np.allclose(v.coeffs[:, ::2], u.coeffs, atol=1e-12)


def test_field_csv_round_trip(tmp_path):
    u = random_field(10, index=1, scale=2.5)
    write_field_csv(u, tmp_path / "u.csv")
    v = read_field_csv(tmp_path / "u.csv")
    assert v.index == 1 and v.scale == 2.5 and np.array_equal(v.coeffs, u.coeffs)
