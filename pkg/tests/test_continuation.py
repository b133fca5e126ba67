from __future__ import annotations

import math

import numpy as np
import pytest

from isochron.analysis import rotation_number_weighted
from isochron.circlefn import CircleFunction, uniform_knots
from isochron.continuation import (
    ContinuationOptions,
    Path,
    continue_family,
    continue_fixed_rotation,
    double_grid,
    estimate_regularity,
    increase_order,
    predictor_first_order,
)
from isochron.io import load_checkpoint, save_checkpoint
from isochron.maps import DstMap, DstParams, exact_solution_dst_k0
from isochron.newton import residual, residual_norms

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _dst_path(k_end, gamma=0.5, eta=0.3):
    return Path({"k": 0.0, "gamma": gamma, "eta": eta}, {"k": k_end, "gamma": gamma, "eta": eta})


def _spline_error(P, delta=1e-3):
    """Gap between the cubic interpolant and the trigonometric one at cell midpoints."""
    P2 = double_grid(P)
    mid = P2.knots[1::2]
    err = 0.0
    for Wi, Wd in zip(P.W, P2.W):
        tot = 0.0
        for j in range(Wi.L + 1):
            tot += float(np.max(np.abs(Wi.coeff(j)(mid) - Wd.coeff(j).values[1::2]))) * delta**j
        err = max(err, tot)
    return err


def test_zero_length_path_single_record():
    m = DstMap(DstParams(0.0, 0.5, 0.3))
    P0 = exact_solution_dst_k0(m.params, n=64, L=2)
    recs, P = continue_family(m, P0, _dst_path(0.0), ContinuationOptions(rotation=False))
    assert len(recs) == 1
    assert P is P0


def test_dst_path_to_k03_reaches_tolerance():
    m = DstMap(DstParams(0.0, 0.5, 0.3))
    P0 = exact_solution_dst_k0(m.params, n=1024, L=10)
    opts = ContinuationOptions(tol=1e-14, step=1e-3, rotation=False)
    recs, P = continue_family(m, P0, _dst_path(0.3), opts)
    assert recs[-1].note.endswith("completed")
    assert recs[-1].params["k"] == pytest.approx(0.3)
    assert recs[-1].residual[0] <= 1e-14
    for r in recs:
        if r.accepted:
            assert r.residual[0] <= opts.tol
            assert r.step <= opts.step_max


def test_step_halving_after_rejection():
    m = DstMap(DstParams(0.0, 0.5, 0.3))
    P0 = exact_solution_dst_k0(m.params, n=128, L=4)
    opts = ContinuationOptions(tol=1e-9, step=0.5, step_max=0.5, maxit=6, rotation=False, n_max=128)
    recs, _ = continue_family(m, P0, _dst_path(2.5), opts)
    rejected = [i for i, r in enumerate(recs[:-1]) if not r.accepted]
    assert rejected, "the path should force at least one rejection"
    for i in rejected:
        nxt = recs[i + 1]
        remaining = 1.0 - (recs[i].eps - recs[i].step)
        assert nxt.step == min(0.5 * recs[i].step, remaining)
    assert all(r.step <= opts.step_max for r in recs)


def test_checkpoint_reload_reproduces_residual(tmp_path):
    m = DstMap(DstParams(0.0, 0.5, 0.3))
    P0 = exact_solution_dst_k0(m.params, n=256, L=6)
    saved = []

    def keep(rec, P):
        if rec.accepted and rec.eps > 0:
            d = tmp_path / f"step{len(saved)}"
            save_checkpoint(P, d, "dst", rec.params)
            saved.append((d, rec))

    opts = ContinuationOptions(tol=1e-10, step=0.02, step_max=0.05, rotation=False, filter_fraction=None)
    continue_family(m, P0, _dst_path(0.2), opts, keep)
    assert len(saved) >= 3
    for d, rec in saved:
        P, man = load_checkpoint(d)
        fm = m.with_params(**man["params"])
        res = residual_norms(residual(fm, P))[0]
        assert res <= 10 * max(rec.residual[0], 1e-16)


def test_grid_doubling_residual_bounded_by_spline_error(dst_k03_small):
    fmap, P, hist = dst_k03_small
    before = hist[-1].residual[0]
    after = residual_norms(residual(fmap, double_grid(P)))[0]
    assert after <= before + 10 * _spline_error(P)


def test_predictor_zero_step_unchanged(dst_k03_small):
    fmap, P, _ = dst_k03_small
    assert predictor_first_order(fmap, P, {"k": 1.0}, 0.0) is P


def test_predictor_zero_parameter_derivative_is_identity(dst_k03_small):
    fmap, P, _ = dst_k03_small
    out = predictor_first_order(fmap, P, {"k": 0.0, "gamma": 0.0, "eta": 0.0}, 0.1)
    for Wn, Wo in zip(out.W, P.W):
        np.testing.assert_array_equal(Wn.coeffs, Wo.coeffs)
    np.testing.assert_array_equal(out.a.values, P.a.values)


def test_predictor_improves_initial_residual(dst_k03_small):
    fmap, P, _ = dst_k03_small
    h = 0.02
    target = fmap.with_params(k=0.3 + h)
    r0 = residual_norms(residual(target, P))[0]
    r1 = residual_norms(residual(target, predictor_first_order(fmap, P, {"k": 1.0}, h)))[0]
    assert r1 < r0


def test_increase_order_same_order_is_noop(dst_k03_small):
    fmap, P, _ = dst_k03_small
    P2, sched = increase_order(fmap, P, P.L, P.L, tol=1e-8)
    assert len(sched) == 1 and sched[0][0] == P.L
    for Wn, Wo in zip(P2.W, P.W):
        np.testing.assert_array_equal(Wn.coeffs, Wo.coeffs)


def test_increase_order_k0_added_terms_zero_and_delta_capped():
    p = DstParams(0.0, 0.5, 0.3)
    m = DstMap(p)
    P = exact_solution_dst_k0(p, n=64, L=2)
    P2, sched = increase_order(m, P, 2, 5, tol=1e-10, delta_cap=1e3)
    assert [L for L, _ in sched] == [2, 3, 4, 5]
    for Wi in P2.W:
        assert np.all(Wi.coeffs[2:] == 0.0)
    assert all(d == 1e3 for _, d in sched)


def test_fixed_rotation_k0_gives_eta_equal_omega():
    p = DstParams(0.0, 0.5, GOLDEN)
    P0 = exact_solution_dst_k0(p, n=128, L=3)
    recs, pairs, _ = continue_fixed_rotation(DstMap(p), P0, GOLDEN, [0.0])
    assert pairs[0] == (0.0, GOLDEN)
    assert recs[0].iterations == 0


def test_fixed_rotation_brent_budget():
    p = DstParams(0.0, 0.5, GOLDEN)
    P0 = exact_solution_dst_k0(p, n=256, L=4)
    opts = ContinuationOptions(tol=1e-11, rotation=False)
    recs, pairs, P = continue_fixed_rotation(DstMap(p), P0, GOLDEN, [0.05, 0.1], opts, rot_tol=1e-10)
    assert all(r.iterations <= 60 for r in recs)
    assert abs(rotation_number_weighted(P.a) - GOLDEN) <= 1e-10
    assert pairs[-1][0] == 0.1


@pytest.mark.parametrize("r", [0.5, 1.5, 1.9])
def test_estimate_regularity_power_law(r):
    n = 1024
    x = uniform_knots(n)
    k = np.arange(1, n // 2)
    vals = np.sum(k[:, None] ** (-(r + 1.0)) * np.cos(2 * np.pi * np.outer(k, x)), axis=0)
    est = estimate_regularity(CircleFunction(x, vals, 0))
    assert abs(est - r) < 0.25


def test_estimate_regularity_smooth_is_infinite():
    x = uniform_knots(256)
    f = CircleFunction(x, np.sin(2 * np.pi * x) + 0.1 * np.cos(6 * np.pi * x), 0)
    assert estimate_regularity(f) == math.inf
