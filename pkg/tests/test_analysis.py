from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isochron.analysis import (
    birkhoff_weight,
    detect_rational_lock,
    fit_breakdown,
    globalize_isochrons,
    min_bundle_angle,
    periodic_orbit_eigen,
    push_forward,
    rotation_number,
    rotation_number_weighted,
)
from isochron.circlefn import CircleFunction, uniform_knots
from isochron.errors import OrbitNotFound
from isochron.maps import DstMap, DstParams, exact_solution_dst_k0
from isochron.taylorfield import field_eval, rescale_s

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
FIT_TRUE = (45.8879, 0.9085, 1.5247)


def arnold(omega, b, n=512):
    x = uniform_knots(n)
    return CircleFunction(x, x + omega + b * np.sin(2 * np.pi * x), 1)


# rotation numbers


def test_birkhoff_weight_support():
    w = birkhoff_weight(np.array([-0.1, 0.0, 0.5, 1.0, 1.2]))
    assert w[0] == w[1] == w[3] == w[4] == 0.0
    assert w[2] == pytest.approx(math.exp(-16.0))


def test_golden_rotation_recovered():
    a = CircleFunction.rotation(GOLDEN, uniform_knots(64))
    assert abs(rotation_number_weighted(a, 10_000, 2) - GOLDEN) <= 1e-12


def test_identity_has_zero_rotation():
    a = CircleFunction.identity(uniform_knots(64))
    assert rotation_number_weighted(a, 10_000) == 0.0


def test_rigid_third_detected():
    a = CircleFunction.rotation(1.0 / 3.0, uniform_knots(64))
    assert detect_rational_lock(a, M=3000) == (1, 3)


def test_irrational_conjugate_not_locked():
    assert detect_rational_lock(arnold(GOLDEN, 0.05), M=5000) is None


def test_locked_map_reports_exact_fraction():
    a = arnold(0.5, 0.15)
    lock = detect_rational_lock(a, M=5000)
    assert lock == (1, 2)
    assert rotation_number(a) == 0.5


@given(st.floats(0.0, 1.0))
def test_rotation_invariant_under_start_shift(x0):
    a = arnold(GOLDEN, 0.05)
    r0 = rotation_number_weighted(a, 10_000)
    assert abs(rotation_number_weighted(a, 10_000, x0=x0) - r0) <= 1e-10


@pytest.mark.parametrize("omega,b", [(0.5, 0.15), (0.5, 0.05), (1.0 / 3.0, 0.0), (0.25, 0.0)])
def test_lock_and_average_agree(omega, b):
    a = arnold(omega, b)
    lock = detect_rational_lock(a, M=5000)
    assert lock is not None
    M = 10_000
    assert abs(rotation_number_weighted(a, M) - lock[0] / lock[1]) <= 1.0 / (2 * M)


# bundle angles


@pytest.mark.parametrize("gamma", [0.3, 0.5, 0.6])
def test_k0_angle_constant(gamma):
    P = exact_solution_dst_k0(DstParams(0.0, gamma, 0.3), n=64, L=2)
    c = gamma / (gamma - 1.0)
    expected = math.acos(abs(c) / math.hypot(1.0, c))
    amin, _, prof = min_bundle_angle(P)
    np.testing.assert_allclose(prof, expected, rtol=0, atol=1e-14)
    assert amin == pytest.approx(expected, abs=1e-14)


def test_parallel_bundles_give_zero_angle():
    P = exact_solution_dst_k0(DstParams(0.0, 0.5, 0.3), n=64, L=2)
    c1, c2 = P.W[0].coeffs.copy(), P.W[1].coeffs.copy()
    c1[1], c2[1] = 1.0, 0.0
    P = P.with_(W=(P.W[0].replace(coeffs=c1), P.W[1].replace(coeffs=c2)))
    assert min_bundle_angle(P)[0] == 0.0


@given(st.floats(0.05, 20.0))
def test_angle_invariant_under_rescaling(dst_k03_small, b):
    _, P, _ = dst_k03_small
    Pb = P.with_(W=tuple(rescale_s(Wi, b) for Wi in P.W))
    np.testing.assert_allclose(min_bundle_angle(Pb)[2], min_bundle_angle(P)[2], rtol=1e-13, atol=1e-15)


# breakdown fits


def _model_samples(k):
    al, be, kc = FIT_TRUE
    return al * (kc - k) ** be


def test_fit_recovers_exact_model():
    k = np.linspace(1.0, 1.45, 20)
    fit = fit_breakdown(list(zip(k, _model_samples(k))))
    assert fit.k_crit == pytest.approx(FIT_TRUE[2], abs=1e-6)
    assert fit.beta_exp == pytest.approx(FIT_TRUE[1], abs=1e-6)
    assert fit.alpha == pytest.approx(FIT_TRUE[0], rel=1e-6)
    assert fit.k_crit > k.max() and fit.beta_exp > 0


def test_fit_noise_monte_carlo():
    rng = np.random.default_rng(7)
    k = np.linspace(1.0, 1.45, 20)
    clean = _model_samples(k)
    errs = []
    for _ in range(100):
        noisy = clean * (1.0 + 0.01 * rng.standard_normal(k.size))
        errs.append(abs(fit_breakdown(list(zip(k, noisy))).k_crit - FIT_TRUE[2]))
    assert max(errs) <= 0.01


def test_fit_needs_six_samples():
    with pytest.raises(ValueError):
        fit_breakdown([(0.1, 1.0)] * 5)


# periodic orbits


@pytest.mark.parametrize("p,q", [(1, 3), (2, 5)])
def test_k0_periodic_orbit_multipliers(p, q):
    gamma = 0.5
    m = DstMap(DstParams(0.0, gamma, p / q))
    info = periodic_orbit_eigen(m, [0.2, 0.0], q)
    assert info.p == p
    np.testing.assert_allclose(np.sort(np.abs(info.eigenvalues)), [gamma**q, 1.0], rtol=1e-12)
    assert info.r_star is None


def test_orbit_not_found():
    m = DstMap(DstParams(0.0, 0.5, GOLDEN))
    with pytest.raises(OrbitNotFound):
        periodic_orbit_eigen(m, [0.2, 0.0], 3, p=1, maxit=5)


# leaves and globalization


def test_zero_backward_steps_give_local_leaf(dst_k03_small):
    fmap, P, _ = dst_k03_small
    s = np.linspace(-0.05, 0.05, 11)
    curve = globalize_isochrons(fmap, P, [0.3], 0, s)[0]
    th = np.full_like(s, 0.3)
    np.testing.assert_array_equal(curve[:, 0], field_eval(P.W[0], th, s))
    np.testing.assert_array_equal(curve[:, 1], field_eval(P.W[1], th, s))


@pytest.mark.parametrize("n_back", [1, 3, 5])
def test_forward_backward_round_trip(dst_k03_small, n_back):
    fmap, P, _ = dst_k03_small
    s = np.linspace(-0.05, 0.05, 21)
    theta0 = 0.17
    curve = globalize_isochrons(fmap, P, [theta0], n_back, s)[0]
    back = push_forward(fmap, curve, n_back)
    th = theta0
    for _ in range(n_back):
        th = th + float(P.a.spline(np.array([th]))[0])
    thv = np.full_like(s, th)
    local = np.stack([field_eval(P.W[0], thv, s), field_eval(P.W[1], thv, s)], axis=1)
    assert np.max(np.abs(back - local)) <= 1e-8


def test_phase_locked_seeding_moves_base_points(dst_k03_small):
    fmap, P, _ = dst_k03_small
    s = np.array([0.0])
    direct = globalize_isochrons(fmap, P, [0.1], 0, s)[0]
    locked = globalize_isochrons(fmap, P, [0.1], 0, s, grid_strategy="phase-locked", n_lock=3)[0]
    assert not np.allclose(direct, locked)


@given(st.integers(0, 255), st.floats(-1e-3, 1e-3))
def test_leaves_map_to_leaves(dst_k03_small, i, s):
    fmap, P, hist = dst_k03_small
    th = P.knots[i : i + 1]
    sv = np.array([s])
    img = fmap.apply(np.stack([field_eval(Wi, th, sv) for Wi in P.W]))
    th1 = th + P.a.spline(th)
    s1 = P.lam(th) * sv
    target = np.stack([field_eval(Wi, th1, s1) for Wi in P.W])
    assert np.max(np.abs(img - target)) <= 10 * hist[-1].residual[0]
