import subprocess
import sys

import numpy as np
import pytest

from afts._accel import (
    HAVE_NUMBA,
    get_admm_kernel,
    get_fista_kernel,
    power_iteration_sq_norm,
    resolve_backend,
)
from afts.baseline_cov import FistaConfig, GroupLassoProblem, fista_group_lasso
from afts.block_rmd import RmdConfig, solve

from .oracles import random_feasible_system

pytestmark = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not importable")


def admm_args(sys, gamma, rng):
    step = 0.95 / power_iteration_sq_norm(sys.G)
    theta = np.zeros((sys.G.shape[1], sys.d_tilde))
    z = sys.g0.copy()
    u = np.zeros_like(sys.g0)
    return (
        sys.G, sys.g0, sys.row_offsets, sys.col_offsets,
        float(gamma), 1.0, float(step), 1e-6, 1e-7, 3000,
        theta, z, u, 10, 5, 300, 100,
    )


class TestBackendSelection:
    def test_resolve(self):
        assert resolve_backend("numpy") == "numpy"
        assert resolve_backend("numba") == "numba"
        assert resolve_backend("auto") in ("numba", "numpy")
        with pytest.raises(ValueError):
            resolve_backend("fortran")

    def test_env_flag_forces_numpy(self):
        code = (
            "import os; os.environ['AFTS_BACKEND']='numpy';"
            "from afts._accel import resolve_backend;"
            "print(resolve_backend())"
        )
        out = subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True, check=True
        )
        assert out.stdout.strip() == "numpy"

    def test_kernels_distinct(self):
        assert get_admm_kernel("numpy") is not get_admm_kernel("numba")
        assert get_fista_kernel("numpy") is not get_fista_kernel("numba")


class TestAdmmTwins:
    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_same_trajectory(self, seed, warm_kernels):
        rng = np.random.default_rng(seed)
        sys, gamma = random_feasible_system(rng, p_max=5, q_max=6, d_max=2, dt_max=2)
        out_np = get_admm_kernel("numpy")(*admm_args(sys, gamma, rng))
        out_nb = get_admm_kernel("numba")(*admm_args(sys, gamma, rng))
        theta_np, *_ = out_np
        theta_nb, *_ = out_nb
        assert out_np[3] == out_nb[3]  # iteration counts agree
        assert np.allclose(theta_np, theta_nb, atol=1e-9)
        for a, b in zip(out_np[4:9], out_nb[4:9]):
            assert a == pytest.approx(b, rel=1e-6, abs=1e-9)
        assert out_np[9] == out_nb[9]  # status

    def test_solve_objective_agreement(self, warm_kernels):
        rng = np.random.default_rng(9)
        sys, gamma = random_feasible_system(rng, p_max=4, q_max=6)
        a = solve(sys, gamma, RmdConfig(backend="numpy"))
        b = solve(sys, gamma, RmdConfig(backend="numba"))
        assert a.objective == pytest.approx(b.objective, rel=1e-8, abs=1e-10)
        assert a.solver_stats["backend"] == "numpy"
        assert b.solver_stats["backend"] == "numba"


class TestFistaTwins:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_same_result(self, seed, warm_kernels):
        rng = np.random.default_rng(seed)
        n, p, d, dt = 40, 5, 2, 2
        X = rng.standard_normal((n, p * d))
        Y = rng.standard_normal((n, dt))
        off = np.arange(0, (p + 1) * d, d)
        problem = GroupLassoProblem(design=X, response=Y, offsets=off, penalty=0.05)
        t_np, info_np = fista_group_lasso(problem, FistaConfig(backend="numpy"))
        t_nb, info_nb = fista_group_lasso(problem, FistaConfig(backend="numba"))
        assert info_np["iterations"] == info_nb["iterations"]
        assert np.allclose(t_np, t_nb, atol=1e-10)
        assert info_np["objective"] == pytest.approx(info_nb["objective"], rel=1e-10)
