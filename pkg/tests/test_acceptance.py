"""Acceptance checks, one printed PASS/FAIL line per criterion.

Run directly (``python tests/test_acceptance.py``) for the summary, or through
pytest, where each criterion is one test.  The breakdown scan honours the
``ISOCHRON_SCAN_SECONDS`` environment variable (default 900).
"""

from __future__ import annotations

import csv
import functools
import math
import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from test_cohomology import instance, naive_sum  # noqa: E402

from isochron.analysis import detect_rational_lock, fit_breakdown, rotation_number_weighted  # noqa: E402
from isochron.circlefn import CircleFunction, uniform_knots  # noqa: E402
from isochron.cli import bench_grid, main as cli_main, scaling_ratios  # noqa: E402
from isochron.cohomology import solve_coho_batch  # noqa: E402
from isochron.continuation import ContinuationOptions, Path as ParamPath, continue_family  # noqa: E402
from isochron.maps import (  # noqa: E402
    DstMap,
    DstParams,
    Faf3Map,
    Faf3Params,
    exact_solution_dst_k0,
    exact_solution_faf3_eps0,
)
from isochron.newton import (  # noqa: E402
    newton_step,
    residual,
    residual_norms,
    resample_parameterization,
    solution_norm,
    solve_invariance,
)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
ROOT = Path(__file__).resolve().parent.parent

# reference values
TABLE1_FIRST = 9.710402e-3
TABLE2_NORM = 1.0797
K_CRIT_REF = 1.5247
REGIMES = {"stable": (0.5, 0.2), "saddle": (0.4, 1.7), "unstable": (2.0, 3.0)}


def report(n: int, ok: bool, detail: str) -> bool:
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    return ok


# 1 and 2: the k=0.3 solve and its grid-doubling check


@functools.lru_cache(maxsize=None)
def table1_run():
    fmap = DstMap(DstParams(0.3, 0.5, 0.3))
    P0 = exact_solution_dst_k0(DstParams(0.0, 0.5, 0.3), n=1024, L=10)
    t0 = time.process_time()
    P, hist = solve_invariance(fmap, P0, tol=1e-13, maxit=8)
    return fmap, P, [s.residual[0] for s in hist], time.process_time() - t0


def criterion_1():
    _, _, res, secs = table1_run()
    first = res[1]
    in_band = TABLE1_FIRST / 3 <= first <= 3 * TABLE1_FIRST
    monotone = all(b < a for a, b in zip(res, res[1:]))
    # superlinear: the contraction factor shrinks while the residual is above the round-off floor
    q = [b / a for a, b in zip(res, res[1:]) if b >= 1e-10]
    superlinear = all(y < x for x, y in zip(q, q[1:]))
    iters = len(res) - 1
    ok = in_band and monotone and superlinear and res[-1] <= 1e-13 and iters <= 8 and secs <= 60
    return report(
        1,
        ok,
        f"first {first:.3e} (band [{TABLE1_FIRST / 3:.3e}, {3 * TABLE1_FIRST:.3e}]), "
        f"final {res[-1]:.2e} after {iters} iterations, monotone={monotone}, superlinear={superlinear}, {secs:.1f} s",
    )


def criterion_2():
    fmap, P, _, _ = table1_run()
    Q = resample_parameterization(P, uniform_knots(2 * P.n))
    Q, _ = solve_invariance(fmap, Q, tol=1e-13, maxit=6)
    res = residual_norms(residual(fmap, Q))[0]
    norm = solution_norm(Q, 1e-3, 0)
    rel = abs(norm - TABLE2_NORM) / TABLE2_NORM
    ok = res <= 1e-10 and rel <= 0.05
    return report(2, ok, f"N={Q.n} residual {res:.2e} (<= 1e-10), X0 norm {norm:.4f} vs {TABLE2_NORM} ({100 * rel:.1f}% off, limit 5%)")


# 3: exact seeds


def _max_correction(stats):
    return max(stats.correction_a, stats.correction_lam, stats.correction_W)


def criterion_3():
    lines = []
    ok = True
    p = DstParams(0.0, 0.5, 0.3)
    P = exact_solution_dst_k0(p, n=1024, L=10)
    fmap = DstMap(p)
    r = residual_norms(residual(fmap, P))[0]
    _, st = newton_step(fmap, P)
    c = _max_correction(st)
    ok &= r <= 1e-14 and c <= 1e-12
    lines.append(f"dst k=0 residual {r:.1e} correction {c:.1e}")
    for name, (beta, gamma) in REGIMES.items():
        fp = Faf3Params(alpha=GOLDEN, eps=0.0, beta=beta, gamma=gamma)
        P = exact_solution_faf3_eps0(fp, n=1024, L=(3, 3))
        fm = Faf3Map(fp)
        r = residual_norms(residual(fm, P))[0]
        _, st = newton_step(fm, P)
        c = _max_correction(st)
        ok &= r <= 1e-12 and c <= 1e-12
        lines.append(f"faf3 {name} residual {r:.1e} correction {c:.1e}")
    return report(3, ok, "; ".join(lines))


# 4: cohomology against the naive series


def criterion_4():
    worst, passes = 0.0, 0
    for seed in range(50):
        l, a, eta = instance(seed, n=256, lmax=0.9)
        out = solve_coho_batch(l.values[None], a, eta.values[None], 1e-14, 10, 8)
        passes = max(passes, out.passes)
        worst = max(worst, float(np.max(np.abs(out.phi[0] - naive_sum(l, a, eta, 1024)))))
    ok = worst <= 1e-11 and passes <= 10
    return report(4, ok, f"50 instances: max C0 gap {worst:.2e} (<= 1e-11), doubling passes <= {passes} (<= 10)")


# 5: rotation numbers and the staircase


def staircase_rows(out_dir):
    cfg = Path(out_dir) / "staircase.json"
    cfg.write_text(
        '{"mode": "staircase", "gamma": 0.1, "eta": 0.3, "to": 5.0, "N": 256, "L": 4, "tol": 1e-10,'
        ' "step": 0.01, "step_max": 0.05, "n_max": 16384, "eta_start": 0.065, "eta_stop": 0.935, "eta_num": 200}'
    )
    code = cli_main(["continue", "--config", str(cfg), "--out", str(out_dir)])
    with open(Path(out_dir) / "staircase.csv", newline="") as fh:
        return code, list(csv.DictReader(fh))


def criterion_5():
    golden = rotation_number_weighted(CircleFunction.rotation(GOLDEN, uniform_knots(256)), 10_000, 2)
    g_err = abs(golden - GOLDEN)
    third = detect_rational_lock(CircleFunction.rotation(1.0 / 3.0, uniform_knots(256)), M=3000)
    with tempfile.TemporaryDirectory() as d:
        code, rows = staircase_rows(d)
    conv = [r for r in rows if r["converged"] == "1"]
    rho = np.array([float(r["rotation_number"]) for r in conv])
    drop = float(np.max(-np.diff(rho))) if rho.size > 1 else math.inf
    ok = g_err <= 1e-12 and third == (1, 3) and code == 0 and len(conv) == 200 and drop <= 1e-8
    return report(
        5,
        ok,
        f"golden error {g_err:.1e}, 1/3 rotation -> {third}, staircase {len(conv)}/200 solved, "
        f"largest decrease {max(drop, 0.0) + 0.0:.1e} (<= 1e-8), range [{rho.min():.4f}, {rho.max():.4f}]",
    )


# 6: breakdown scan


@functools.lru_cache(maxsize=None)
def breakdown_scan(seconds: float):
    fmap = DstMap(DstParams(0.0, 0.6, 0.4))
    P0 = exact_solution_dst_k0(fmap.params, n=512, L=1)
    opts = ContinuationOptions(
        tol=1e-8, tail_tol=1e-8, step=0.01, step_max=0.02, n_max=1 << 16, rotation=False, predictor="first", time_limit=seconds
    )
    path = ParamPath({"k": 0.0, "gamma": 0.6, "eta": 0.4}, {"k": 1.6, "gamma": 0.6, "eta": 0.4})
    records, _ = continue_family(fmap, P0, path, opts)
    return [(r.params["k"], r.min_angle) for r in records if r.accepted]


def criterion_6():
    seconds = float(os.environ.get("ISOCHRON_SCAN_SECONDS", "900"))
    samples = breakdown_scan(seconds)
    k_max = max(k for k, _ in samples)
    # the tail is the last third of the reached range
    tail = [(k, a) for k, a in samples if k >= 2.0 * k_max / 3.0]
    angles = [a for _, a in tail]
    decreasing = all(b < a for a, b in zip(angles, angles[1:]))
    fit = fit_breakdown(tail)
    reached = k_max >= 1.40
    full = reached and 1.45 <= fit.k_crit <= 1.60
    fallback = (not reached) and abs(fit.k_crit - K_CRIT_REF) <= 0.1
    ok = decreasing and (full or fallback)
    rule = "full tail" if reached else "reachable-tail fallback (+-0.1 of 1.5247)"
    return report(
        6,
        ok,
        f"reached k={k_max:.4f} (k >= 1.40: {'yes' if reached else 'no'}), {len(tail)} tail samples strictly decreasing={decreasing}, "
        f"fit k_crit={fit.k_crit:.4f} beta={fit.beta_exp:.3f} alpha={fit.alpha:.3f}, judged by {rule}",
    )


# 7: cost scaling


def criterion_7():
    times = bench_grid([1024, 4096, 16384], [2, 5, 10], repeats=3)
    rows = scaling_ratios(times)
    worst = max(r[4] for r in rows)
    ok = worst <= 3.2
    return report(7, ok, f"largest time factor per doubling of N or L {worst:.2f} (<= 3.2) over {len(rows)} pairs")


# 8: invariant suites


INVARIANT_MODULES = [
    "tests/test_circlefn.py",
    "tests/test_taylorfield.py",
    "tests/test_cohomology.py",
    "tests/test_maps.py",
    "tests/test_newton.py",
    "tests/test_continuation.py",
    "tests/test_analysis.py",
    "tests/test_io.py",
    "tests/test_cli.py",
]


def criterion_8():
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *INVARIANT_MODULES],
        cwd=ROOT,
        capture_output=True,
        text=True,
    )
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    return report(8, proc.returncode == 0, f"module suites: {summary}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8]


@pytest.mark.slow
@pytest.mark.parametrize("check", CRITERIA, ids=[f"criterion_{i + 1}" for i in range(len(CRITERIA))])
def test_criterion(check):
    assert check()


if __name__ == "__main__":
    results = [check() for check in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
