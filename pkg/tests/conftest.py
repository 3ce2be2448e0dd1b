import numpy as np
import pytest

from afts.func_core import Grid


@pytest.fixture(scope="session")
def unit_grid():
    return Grid.uniform(0.0, 1.0, 101)


@pytest.fixture(scope="session")
def fine_grid():
    return Grid.uniform(0.0, 1.0, 512)


@pytest.fixture(scope="session")
def warm_kernels():
    """Compile the numba kernels once so timings elsewhere are honest."""
    from afts.baseline_cov import FistaConfig, GroupLassoProblem, fista_group_lasso
    from afts.block_rmd import MomentSystem, RmdConfig, solve

    from afts.errors import ConvergenceError

    rng = np.random.default_rng(0)
    sys = MomentSystem(
        G=np.eye(4),
        g0=rng.standard_normal((4, 1)),
        row_offsets=np.array([0, 2, 4]),
        col_offsets=np.array([0, 2, 4]),
    )
    try:
        solve(sys, 0.5 * sys.gamma_max(), RmdConfig(max_iter=200))
    except ConvergenceError:
        pass
    problem = GroupLassoProblem(
        design=rng.standard_normal((10, 4)),
        response=rng.standard_normal(10),
        offsets=np.array([0, 2, 4]),
        penalty=0.1,
    )
    fista_group_lasso(problem, FistaConfig(max_iter=100))
    return True
