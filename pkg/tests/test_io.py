from __future__ import annotations

import json

import numpy as np
import pytest

from isochron.errors import InvalidRepresentation
from isochron.io import load_checkpoint, save_checkpoint, write_table
from isochron.maps import DstParams, Faf3Params, exact_solution_dst_k0, exact_solution_faf3_eps0
from isochron.newton import Parameterization3


def _assert_same(P, Q):
    for Wp, Wq in zip(P.W, Q.W):
        np.testing.assert_array_equal(Wp.coeffs, Wq.coeffs)
        assert Wp.index == Wq.index and Wp.scale == Wq.scale and Wp.spline_order == Wq.spline_order
    for lp, lq in zip([P.a, *P.rates, P.ainv], [Q.a, *Q.rates, Q.ainv]):
        np.testing.assert_array_equal(lp.values, lq.values)
        np.testing.assert_array_equal(lp.knots, lq.knots)
        assert lp.index == lq.index


def test_checkpoint_2d_bit_identical(tmp_path, dst_k03_small):
    fmap, P, _ = dst_k03_small
    save_checkpoint(P, tmp_path / "ck", "dst", fmap.param_dict())
    Q, man = load_checkpoint(tmp_path / "ck")
    _assert_same(P, Q)
    assert man["kind"] == "2d" and man["N"] == P.n and man["params"] == fmap.param_dict()


def test_checkpoint_3d_bit_identical(tmp_path):
    P = exact_solution_faf3_eps0(Faf3Params(alpha=0.6180339887498949, eps=0.0, beta=0.5, gamma=0.2), n=64, L=(2, 2))
    save_checkpoint(P, tmp_path / "ck", "faf3")
    Q, man = load_checkpoint(tmp_path / "ck")
    assert isinstance(Q, Parameterization3)
    _assert_same(P, Q)
    assert man["kind"] == "3d"


def test_checkpoint_rewrite_is_byte_identical(tmp_path):
    P = exact_solution_dst_k0(DstParams(0.0, 0.5, 0.3), n=32, L=3)
    save_checkpoint(P, tmp_path / "a", "dst")
    Q, _ = load_checkpoint(tmp_path / "a")
    save_checkpoint(Q, tmp_path / "b", "dst")
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_missing_manifest(tmp_path):
    with pytest.raises(InvalidRepresentation):
        load_checkpoint(tmp_path)


def test_manifest_mismatch_rejected(tmp_path):
    P = exact_solution_dst_k0(DstParams(0.0, 0.5, 0.3), n=32, L=3)
    save_checkpoint(P, tmp_path, "dst")
    man = json.loads((tmp_path / "manifest.json").read_text())
    man["N"] = 64
    (tmp_path / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(InvalidRepresentation):
        load_checkpoint(tmp_path)


def test_table_is_rfc4180(tmp_path):
    path = write_table(tmp_path / "t.csv", ["a", "b"], [[1, 'x,"y"'], [0.1, True]])
    assert path.read_bytes() == b'a,b\r\n1,"x,""y"""\r\n0.1,1\r\n'
