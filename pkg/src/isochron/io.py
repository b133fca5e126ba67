"""Checkpoints and run logs.

A checkpoint is a directory holding one CSV file per unknown plus
``manifest.json`` with the grid size, truncation orders, scale, indices, map
family and parameters.  Floats are written with ``repr`` so a reload is
bit-identical.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .circlefn import read_csv, same_grid, write_csv
from .errors import InvalidRepresentation
from .newton import Parameterization, Parameterization3
from .taylorfield import read_field_csv, write_field_csv

__all__ = [
    "save_checkpoint",
    "load_checkpoint",
    "write_table",
    "write_records",
    "write_history",
]

FORMAT_VERSION = 1


def save_checkpoint(P, directory, family: Optional[str] = None, params: Optional[dict] = None, extra=None) -> Path:
    """Write ``P`` to ``directory`` (created if needed) and return the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for i, Wi in enumerate(P.W):
        name = f"W{i + 1}.csv"
        write_field_csv(Wi, d / name)
        files[f"W{i + 1}"] = name
    write_csv(P.a, d / "a.csv")
    files["a"] = "a.csv"
    rate_names = ["lam"] if isinstance(P, Parameterization) else ["lam1", "lam2"]
    for name, l in zip(rate_names, P.rates):
        write_csv(l, d / f"{name}.csv")
        files[name] = f"{name}.csv"
    if P.ainv is not None:
        write_csv(P.ainv, d / "ainv.csv")
        files["ainv"] = "ainv.csv"
    manifest = {
        "format": FORMAT_VERSION,
        "kind": "3d" if isinstance(P, Parameterization3) else "2d",
        "N": int(P.n),
        "L": list(P.W[0].orders),
        "b": float(P.W[0].scale),
        "spline_order": int(P.a.spline_order),
        "index": {k: _index_of(P, k) for k in files},
        "files": files,
        "family": family,
        "params": params or {},
    }
    if extra:
        manifest["extra"] = extra
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _index_of(P, key: str) -> int:
    if key.startswith("W"):
        return int(P.W[int(key[1:]) - 1].index)
    return int(getattr(P, key).index)


def load_checkpoint(directory):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns
    -------
    P : Parameterization or Parameterization3
    manifest : dict
    """
    d = Path(directory)
    if d.is_file():
        d = d.parent
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise InvalidRepresentation(f"no manifest.json in {d}") from exc
    files = manifest["files"]
    dim = 3 if manifest["kind"] == "3d" else 2
    W = tuple(read_field_csv(d / files[f"W{i + 1}"]) for i in range(dim))
    a = read_csv(d / files["a"])
    ainv = read_csv(d / files["ainv"]) if "ainv" in files else None
    for part in list(W) + [a]:
        if not same_grid(part.knots, W[0].knots):
            raise InvalidRepresentation("checkpoint components live on different grids")
    if dim == 3:
        P = Parameterization3(W, a, read_csv(d / files["lam1"]), read_csv(d / files["lam2"]), ainv)
    else:
        P = Parameterization(W, a, read_csv(d / files["lam"]), ainv)
    if P.n != manifest["N"] or list(W[0].orders) != list(manifest["L"]):
        raise InvalidRepresentation("checkpoint data disagree with the manifest")
    return P, manifest


# tables


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (tuple, list)):
        return " ".join(_fmt(v) for v in x)
    return str(x)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """RFC-4180 CSV with a header row and CRLF line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_records(path, records) -> Path:
    """Continuation run log: one row per record, map parameters as columns."""
    pnames = sorted({k for r in records for k in r.params})
    header = ["eps"] + pnames + [
        "N",
        "L",
        "spline_order",
        "res_x0",
        "res_x1",
        "res_x2",
        "rotation_number",
        "min_angle",
        "accepted",
        "step",
        "iterations",
        "note",
    ]
    rows = []
    for r in records:
        rows.append(
            [r.eps]
            + [r.params.get(k, math.nan) for k in pnames]
            + [r.N, r.L, r.spline_order, *r.residual, r.rotation_number, r.min_angle, r.accepted, r.step, r.iterations, r.note.strip()]
        )
    return write_table(path, header, rows)


def write_history(path, history) -> Path:
    """Newton run log in the layout of a convergence table: one row per iterate."""
    # wall-clock times are left out so that reruns give identical files
    header = ["iteration", "res_x0", "res_x1", "res_x2", "correction_a", "correction_lam", "correction_W", "inverse_method", "flags"]
    rows = [
        [s.iteration, *s.residual, s.correction_a, s.correction_lam, s.correction_W, s.inverse_method, ";".join(s.flags)]
        for s in history
    ]
    return write_table(path, header, rows)
