from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from isochron.maps import DstMap, DstParams, exact_solution_dst_k0
from isochron.newton import solve_invariance

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def dst_k03_small():
    """Converged invariance solution of the dissipative standard map at k=0.3, N=256, L=6."""
    fmap = DstMap(DstParams(0.3, 0.5, 0.3))
    P0 = exact_solution_dst_k0(DstParams(0.0, 0.5, 0.3), n=256, L=6)
    P, hist = solve_invariance(fmap, P0, tol=1e-11, maxit=12)
    return fmap, P, hist


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_periodic(rng, n_modes: int = 4, decay: float = 0.5):
    """Random trigonometric polynomial with geometrically decaying coefficients."""
    c = rng.normal(size=(n_modes, 2)) * decay ** np.arange(1, n_modes + 1)[:, None]

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for m in range(n_modes):
            out = out + c[m, 0] * np.cos(2 * np.pi * (m + 1) * x) + c[m, 1] * np.sin(2 * np.pi * (m + 1) * x)
        return out

    return f
