"""Command-line drivers: ``solve``, ``continue``, ``analyze``, ``bench`` and ``solve3d``.

Every run takes a flat JSON configuration (``--config``), writes the fully
resolved configuration to ``<out>/config.json`` and emits CSV tables next to
it.  Exit codes: 0 success, 2 solver failure, 3 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .analysis import (
    fit_breakdown,
    globalize_isochrons,
    min_bundle_angle,
    periodic_orbit_eigen,
    rotation_number,
    rotation_number_weighted,
)
from .circlefn import uniform_knots
from .continuation import (
    ContinuationOptions,
    Path as ParamPath,
    continue_family,
    continue_fixed_rotation,
    filter_parameterization,
)
from .errors import ConfigError, IsochronError
from .io import load_checkpoint, save_checkpoint, write_history, write_records, write_table
from .maps import (
    DstMap,
    DstParams,
    Faf3Map,
    Faf3Params,
    exact_solution_dst_k0,
    exact_solution_faf3_eps0,
)
from .newton import (
    NewtonOptions,
    newton_step_2d,
    resample_parameterization,
    residual,
    residual_norms,
    solution_norm,
    solve_invariance,
)

log = logging.getLogger("isochron")

COMMANDS = ("solve", "continue", "analyze", "bench", "solve3d")
REGIMES = {"stable": (0.5, 0.2), "saddle": (0.4, 1.7), "unstable": (2.0, 3.0)}


@dataclass
class RunConfig:
    """Flat run configuration; every key of the JSON file must be one of these fields."""

    command: str = "solve"
    # map: dissipative standard map (k, gamma, eta) or 3-D family (alpha, eps, beta, gamma)
    family: str = "dst"
    k: float = 0.3
    gamma: float = 0.5
    eta: float = 0.3
    alpha: float = 0.6180339887498949
    eps: float = 0.0
    beta: float = 0.5
    regime: Optional[str] = None
    # discretization
    N: int = 1024
    L: int = 10
    L2: Optional[int] = None
    delta: float = 1e-3
    spline_order: int = 3
    # Newton
    tol: float = 1e-13
    maxit: int = 20
    double_check: bool = True
    # continuation
    mode: str = "family"
    vary: str = "k"
    start: Optional[float] = None
    to: float = 0.3
    step: float = 1e-3
    step_max: float = 0.05
    step_min: float = 1e-8
    n_max: int = 1 << 16
    predictor: str = "order0"
    filter_fraction: Optional[float] = 0.125
    tail_tol: float = 1e-10
    time_limit: Optional[float] = None
    checkpoint_every: int = 0
    rotation_M: int = 10_000
    track_rotation: bool = True
    omega: Optional[float] = None
    k_values: List[float] = field(default_factory=list)
    eta_start: float = 0.0
    eta_stop: float = 1.0
    eta_num: int = 200
    # analysis
    records: Optional[str] = None
    fit_k_min: Optional[float] = None
    orbit_q: int = 0
    orbit_p: Optional[int] = None
    orbit_guess: List[float] = field(default_factory=list)
    isochron_thetas: List[float] = field(default_factory=list)
    n_back: int = 5
    s_min: float = -0.01
    s_max: float = 0.01
    s_num: int = 41
    grid_strategy: str = "direct"
    # benchmark
    bench_N: List[int] = field(default_factory=lambda: [1024, 4096, 16384])
    bench_L: List[int] = field(default_factory=lambda: [2, 5, 10])
    bench_repeats: int = 3
    bench_strict: bool = False
    # 3-D
    mesh_n_theta: int = 64
    mesh_n_s: int = 9
    mesh_s: float = 0.01

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.family not in ("dst", "faf3"):
            raise ConfigError(f"unknown family {self.family!r}")
        for name in ("N", "L", "maxit", "n_max", "rotation_M", "eta_num", "bench_repeats", "s_num"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("delta", "tol", "step", "step_max", "step_min", "tail_tol"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be positive")
        if self.spline_order not in (1, 2, 3):
            raise ConfigError("spline_order must be 1, 2 or 3")
        if self.N < 8 or self.N & (self.N - 1):
            raise ConfigError("N must be a power of two, at least 8")
        if self.mode not in ("family", "fixed_rotation", "staircase"):
            raise ConfigError(f"unknown continuation mode {self.mode!r}")
        if self.predictor not in ("order0", "first"):
            raise ConfigError("predictor must be 'order0' or 'first'")
        if self.grid_strategy not in ("direct", "phase-locked"):
            raise ConfigError("grid_strategy must be 'direct' or 'phase-locked'")
        if self.regime is not None and self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {sorted(REGIMES)}")
        if self.filter_fraction is not None and not 0.0 < self.filter_fraction <= 0.5:
            raise ConfigError("filter_fraction must lie in (0, 0.5]")
        if self.family == "dst" and not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1) for the dissipative standard map")
        return self


def load_config(path: Optional[str], command: str) -> RunConfig:
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    names = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "command" in data and data["command"] != command:
        raise ConfigError(f"config is for {data['command']!r}, not {command!r}")
    data["command"] = command
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


# helpers


def _dst(cfg: RunConfig, **over) -> DstMap:
    p = dict(k=cfg.k, gamma=cfg.gamma, eta=cfg.eta)
    p.update(over)
    return DstMap(DstParams(**p))


def _faf3(cfg: RunConfig, **over) -> Faf3Map:
    beta, gamma = REGIMES[cfg.regime] if cfg.regime else (cfg.beta, cfg.gamma)
    p = dict(alpha=cfg.alpha, eps=cfg.eps, beta=beta, gamma=gamma)
    p.update(over)
    return Faf3Map(Faf3Params(**p))


def _newton_opts(cfg: RunConfig) -> NewtonOptions:
    return NewtonOptions(delta=cfg.delta)


def _seed_dst(cfg: RunConfig, checkpoint: Optional[str]):
    if checkpoint:
        P, _ = load_checkpoint(checkpoint)
        return P
    return exact_solution_dst_k0(DstParams(0.0, cfg.gamma, cfg.eta), n=cfg.N, L=cfg.L, spline_order=cfg.spline_order)


def _write_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")


# commands


def cmd_solve(cfg: RunConfig, out: Path, checkpoint: Optional[str] = None) -> int:
    """Newton solve from the exact k=0 seed (or a checkpoint), with a grid-doubling check."""
    fmap = _dst(cfg)
    P0 = _seed_dst(cfg, checkpoint)
    opts = _newton_opts(cfg)
    P, history = solve_invariance(fmap, P0, cfg.tol, cfg.maxit, opts)
    write_history(out / "convergence.csv", history)
    save_checkpoint(P, out / "checkpoint", "dst", fmap.param_dict())
    rows = [["N", P.n, *history[-1].residual, *(solution_norm(P, cfg.delta, r) for r in range(3))]]
    if cfg.double_check:
        Q = resample_parameterization(P, uniform_knots(2 * P.n))
        try:
            Q, _ = solve_invariance(fmap, Q, cfg.tol, 6, opts)
        except IsochronError as exc:
            log.warning("re-solve on the doubled grid stopped: %s", exc)
        norms = residual_norms(residual(fmap, Q), cfg.delta)
        rows.append(["2N", Q.n, *norms, *(solution_norm(Q, cfg.delta, r) for r in range(3))])
    write_table(
        out / "validation.csv",
        ["grid", "N", "res_x0", "res_x1", "res_x2", "norm_x0", "norm_x1", "norm_x2"],
        rows,
    )
    log.info("solve: %d iterations, residual %.3e", len(history) - 1, history[-1].residual[0])
    return 0


def _continuation_options(cfg: RunConfig) -> ContinuationOptions:
    return ContinuationOptions(
        tol=cfg.tol,
        maxit=cfg.maxit,
        step=cfg.step,
        step_max=cfg.step_max,
        step_min=cfg.step_min,
        n_max=cfg.n_max,
        predictor=cfg.predictor,
        filter_fraction=cfg.filter_fraction,
        tail_tol=cfg.tail_tol,
        rotation=cfg.track_rotation,
        rotation_M=cfg.rotation_M,
        time_limit=cfg.time_limit,
        newton=_newton_opts(cfg),
    )


def _checkpointing_callback(cfg: RunConfig, out: Path, family: str):
    count = {"n": 0}

    def cb(rec, P):
        count["n"] += 1
        if cfg.checkpoint_every and count["n"] % cfg.checkpoint_every == 0:
            save_checkpoint(P, out / "checkpoints" / f"step_{count['n']:05d}", family, rec.params)

    return cb


def cmd_continue(cfg: RunConfig, out: Path, checkpoint: Optional[str] = None) -> int:
    opts = _continuation_options(cfg)
    if cfg.family == "faf3":
        fmap = _faf3(cfg)
        P0 = load_checkpoint(checkpoint)[0] if checkpoint else _seed_faf3(cfg, fmap)
        start = fmap.param_dict()
        start[cfg.vary] = cfg.start if cfg.start is not None else start[cfg.vary]
        end = dict(start, **{cfg.vary: cfg.to})
        records, P = continue_family(fmap, P0, ParamPath(start, end), opts, _checkpointing_callback(cfg, out, "faf3"))
        write_records(out / "records.csv", records)
        save_checkpoint(P, out / "checkpoint", "faf3", records[-1].params)
        return 0
    P0 = _seed_dst(cfg, checkpoint)
    start = {"k": 0.0 if not checkpoint else cfg.k, "gamma": cfg.gamma, "eta": cfg.eta}
    if cfg.start is not None:
        start[cfg.vary] = cfg.start
    fmap = DstMap(DstParams(**start))
    cb = _checkpointing_callback(cfg, out, "dst")
    if cfg.mode == "family":
        end = dict(start, **{cfg.vary: cfg.to})
        records, P = continue_family(fmap, P0, ParamPath(start, end), opts, cb)
        write_records(out / "records.csv", records)
        save_checkpoint(P, out / "checkpoint", "dst", records[-1].params)
        return 0 if records[-1].params[cfg.vary] == cfg.to else 2
    if cfg.mode == "fixed_rotation":
        omega = cfg.omega if cfg.omega is not None else cfg.eta
        ks = cfg.k_values or list(np.linspace(0.0, cfg.to, 11))
        records, pairs, P = continue_fixed_rotation(fmap, P0, omega, ks, opts, rotation_M=cfg.rotation_M)
        write_records(out / "records.csv", records)
        write_table(out / "eta_vs_k.csv", ["k", "eta"], pairs)
        save_checkpoint(P, out / "checkpoint", "dst", records[-1].params)
        return 0
    return _staircase(cfg, out, fmap, P0, opts, start)


def _staircase(cfg, out, fmap, P0, opts, start) -> int:
    """Continue to ``k = to`` and scan the drift over ``[eta_start, eta_stop]``."""
    P = P0
    if start["k"] != cfg.to:
        records, P = continue_family(fmap, P0, ParamPath(start, dict(start, k=cfg.to)), opts)
        write_records(out / "records.csv", records)
        if records[-1].params["k"] != cfg.to:
            log.error("continuation to k=%g stopped at k=%g", cfg.to, records[-1].params["k"])
            return 2
    fmap = fmap.with_params(k=cfg.to)
    if opts.filter_fraction is not None:
        P = filter_parameterization(P, opts.filter_fraction)
    move = replace(opts, rotation=False, step=1.0, step_max=1.0)
    etas = np.linspace(cfg.eta_start, cfg.eta_stop, cfg.eta_num)
    # walk outward from the current drift; each move is a short continuation in eta
    eta0 = fmap.param_dict()["eta"]
    rows = {}
    for side in (np.flatnonzero(etas >= eta0), np.flatnonzero(etas < eta0)[::-1]):
        Q, prev = P, eta0
        for idx in side:
            eta = float(etas[idx])
            a, b = fmap.with_params(eta=prev).param_dict(), fmap.with_params(eta=eta).param_dict()
            recs, Q_new = continue_family(fmap, Q, ParamPath(a, b), move)
            if recs[-1].params["eta"] != eta:
                rows[idx] = [eta, math.nan, math.nan, 0, recs[-1].note]
                continue
            Q, prev = Q_new, eta
            if opts.filter_fraction is not None:
                Q = filter_parameterization(Q, opts.filter_fraction)
            rows[idx] = [eta, rotation_number(Q_new.a, cfg.rotation_M, wrap=False), recs[-1].residual[0], 1, ""]
    write_table(out / "staircase.csv", ["eta", "rotation_number", "res_x0", "converged", "note"], [rows[i] for i in range(len(etas))])
    return 0


def _seed_faf3(cfg: RunConfig, fmap: Faf3Map):
    L2 = cfg.L2 if cfg.L2 is not None else cfg.L
    p0 = fmap.with_params(eps=0.0).params
    return exact_solution_faf3_eps0(p0, n=cfg.N, L=(cfg.L, L2), spline_order=cfg.spline_order)


def cmd_analyze(cfg: RunConfig, out: Path, checkpoint: Optional[str] = None) -> int:
    wrote = False
    if checkpoint:
        P, manifest = load_checkpoint(checkpoint)
        params = manifest.get("params") or {}
        family = manifest.get("family") or cfg.family
        fmap = (_dst(cfg, **params) if family == "dst" else _faf3(cfg, **params))
        amin, theta_min, profile = min_bundle_angle(P)
        write_table(out / "angle_profile.csv", ["theta", "angle"], zip(P.knots, profile))
        rho = rotation_number(P.a, cfg.rotation_M)
        norms = residual_norms(residual(fmap, P), cfg.delta)
        write_table(
            out / "summary.csv",
            ["N", "min_angle", "theta_at_min", "rotation_number", "res_x0", "res_x1", "res_x2"],
            [[P.n, amin, theta_min, rho, *norms]],
        )
        if cfg.orbit_q > 0:
            guess = np.asarray(cfg.orbit_guess or [0.0] * fmap.dim, dtype=float)
            info = periodic_orbit_eigen(fmap, guess, cfg.orbit_q, cfg.orbit_p)
            rows = [[info.q, info.p, i, *pt] for i, pt in enumerate(info.points)]
            write_table(out / "periodic_orbit.csv", ["q", "p", "i"] + [f"x{j}" for j in range(fmap.dim)], rows)
            write_table(
                out / "periodic_orbit_eigen.csv",
                ["q", "p", "eig_abs_1", "eig_abs_2", "r_star"],
                [[info.q, info.p, *sorted(np.abs(info.eigenvalues))[::-1][:2], info.r_star]],
            )
        if cfg.isochron_thetas:
            s = np.linspace(cfg.s_min, cfg.s_max, cfg.s_num)
            leaves = globalize_isochrons(fmap, P, cfg.isochron_thetas, cfg.n_back, s, cfg.grid_strategy)
            for th, pts in zip(cfg.isochron_thetas, leaves):
                write_table(
                    out / f"isochron_{th:.6f}.csv",
                    ["s"] + [f"x{j}" for j in range(pts.shape[1])],
                    ([si, *pt] for si, pt in zip(s, pts)),
                )
        wrote = True
    if cfg.records:
        ks, angs, rhos = _read_records(cfg.records)
        write_table(out / "min_angle_vs_k.csv", ["k", "min_angle"], zip(ks, angs))
        write_table(out / "rotation_vs_k.csv", ["k", "rotation_number"], zip(ks, rhos))
        tail = [(k, a) for k, a in zip(ks, angs) if cfg.fit_k_min is None or k >= cfg.fit_k_min]
        if len(tail) >= 4:
            fit = fit_breakdown(tail)
            write_table(out / "breakdown_fit.csv", ["alpha", "beta", "k_crit", "residual", "samples"], [[fit.alpha, fit.beta_exp, fit.k_crit, fit.residual, len(tail)]])
        wrote = True
    if not wrote:
        raise ConfigError("analyze needs --checkpoint or a 'records' file")
    return 0


def _read_records(path):
    ks, angs, rhos = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row.get("accepted", "1") != "1":
                continue
            ks.append(float(row["k"]))
            angs.append(float(row["min_angle"]))
            rhos.append(float(row["rotation_number"]))
    return np.array(ks), np.array(angs), np.array(rhos)


def time_newton_step(fmap, P, repeats: int = 3) -> float:
    """Best-of-``repeats`` wall time of one 2-D Newton step."""
    e = residual(fmap, P)
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        newton_step_2d(fmap, P, None, e)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_grid(Ns, Ls, repeats: int = 3, gamma: float = 0.5, eta: float = 0.3, k: float = 0.3):
    """Seconds per Newton step for every ``(N, L)``, on a nonzero residual."""
    fmap = DstMap(DstParams(k, gamma, eta))
    times = {}
    for L in Ls:
        for N in Ns:
            P = exact_solution_dst_k0(DstParams(0.0, gamma, eta), n=N, L=L)
            times[(N, L)] = time_newton_step(fmap, P, repeats)
    return times


def scaling_ratios(times):
    """Per-doubling time factors between neighbouring grid points.

    For sizes ``x1 < x2`` the factor is ``(t2 / t1) ** (1 / log2(x2 / x1))``,
    so a 4x jump is reported as the geometric mean of two doublings.  Linear
    cost in N and L gives about 2.
    """
    Ns = sorted({n for n, _ in times})
    Ls = sorted({l for _, l in times})
    rows = []
    for L in Ls:
        for n1, n2 in zip(Ns, Ns[1:]):
            rows.append(("N", L, n1, n2, (times[(n2, L)] / times[(n1, L)]) ** (1.0 / math.log2(n2 / n1))))
    for N in Ns:
        for l1, l2 in zip(Ls, Ls[1:]):
            rows.append(("L", N, l1, l2, (times[(N, l2)] / times[(N, l1)]) ** (1.0 / math.log2(l2 / l1))))
    return rows


# expected per-doubling factors for near-linear cost
BENCH_BANDS = {"N": (1.6, 3.0), "L": (1.5, 3.2)}


def cmd_bench(cfg: RunConfig, out: Path, checkpoint: Optional[str] = None) -> int:
    times = bench_grid(cfg.bench_N, cfg.bench_L, cfg.bench_repeats, cfg.gamma, cfg.eta, cfg.k)
    write_table(out / "bench.csv", ["N", "L", "seconds"], [[n, l, t] for (n, l), t in sorted(times.items())])
    rows = []
    ok = True
    for kind, fixed, x1, x2, factor in scaling_ratios(times):
        lo, hi = BENCH_BANDS[kind]
        inside = lo <= factor <= hi
        ok &= inside
        rows.append([kind, fixed, x1, x2, factor, lo, hi, inside])
    write_table(out / "bench_ratios.csv", ["varied", "fixed", "from", "to", "factor_per_doubling", "band_lo", "band_hi", "within_band"], rows)
    if not ok:
        log.warning("some per-doubling time factors fall outside the expected band")
        if cfg.bench_strict:
            return 2
    return 0


def cmd_solve3d(cfg: RunConfig, out: Path, checkpoint: Optional[str] = None) -> int:
    fmap = _faf3(cfg)
    P0 = load_checkpoint(checkpoint)[0] if checkpoint else _seed_faf3(cfg, fmap)
    opts = _continuation_options(cfg)
    target = cfg.eps
    start = fmap.param_dict()
    start["eps"] = 0.0 if not checkpoint else start["eps"]
    records, P = continue_family(fmap, P0, ParamPath(start, dict(start, eps=target)), opts, _checkpointing_callback(cfg, out, "faf3"))
    write_records(out / "records.csv", records)
    save_checkpoint(P, out / "checkpoint", "faf3", records[-1].params)
    if records[-1].params["eps"] != target:
        log.error("continuation stopped at eps=%g", records[-1].params["eps"])
        return 2
    _export_surfaces(cfg, out, fmap.with_params(eps=target), P)
    return 0


def _export_surfaces(cfg: RunConfig, out: Path, fmap, P) -> None:
    """Isochron surfaces ``W(theta0, s1, s2)`` and their first images as point grids."""
    from .taylorfield import field_eval

    s = np.linspace(-cfg.mesh_s, cfg.mesh_s, cfg.mesh_n_s)
    S1, S2 = np.meshgrid(s, s, indexing="ij")
    thetas = cfg.isochron_thetas or [0.0]
    for th in thetas:
        pts = np.stack([field_eval(Wi, np.full(S1.shape, th), (S1, S2)) for Wi in P.W], axis=-1)
        img = np.asarray(fmap.apply(pts.reshape(-1, 3).T)).T.reshape(pts.shape)
        rows = []
        for i in range(S1.shape[0]):
            for j in range(S1.shape[1]):
                rows.append([S1[i, j], S2[i, j], *pts[i, j], *img[i, j]])
        write_table(out / f"surface_{th:.6f}.csv", ["s1", "s2", "x", "y", "z", "fx", "fy", "fz"], rows)
    theta = uniform_knots(cfg.mesh_n_theta)
    circle = np.stack([field_eval(Wi, theta, (np.zeros_like(theta), np.zeros_like(theta))) for Wi in P.W], axis=-1)
    write_table(out / "circle.csv", ["theta", "x", "y", "z"], ([t, *c] for t, c in zip(theta, circle)))


DISPATCH = {
    "solve": cmd_solve,
    "continue": cmd_continue,
    "analyze": cmd_analyze,
    "bench": cmd_bench,
    "solve3d": cmd_solve3d,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isochron", description="Invariant circles and isochrons of dissipative maps.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat JSON configuration file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--workers", type=int, default=1, help="threads for internal array work (1 = reference mode)")
    p.add_argument("--checkpoint", help="checkpoint directory to start from or analyze")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _set_workers(n: int) -> None:
    if n < 1:
        raise ConfigError("--workers must be at least 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _set_workers(args.workers)
        cfg = load_config(args.config, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    out = Path(args.out)
    _write_config(cfg, out)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return DISPATCH[args.command](cfg, out, args.checkpoint)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except IsochronError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
