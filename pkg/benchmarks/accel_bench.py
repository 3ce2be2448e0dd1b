"""Benchmark the numba kernels against their pure-numpy twins.

Runs the two hot inner loops (block-RMD ADMM, group-lasso FISTA) on
representative problem sizes with both backends and prints a timing table.

    python benchmarks/accel_bench.py [--repeats 3]

The numpy fallback is always available; select it package-wide with
AFTS_BACKEND=numpy.
"""

import argparse
import time

import numpy as np

from afts._accel import HAVE_NUMBA
from afts.autocov_basis import ScorePanel
from afts.baseline_cov import FistaConfig, GroupLassoProblem, fista_group_lasso
from afts.block_rmd import RmdConfig, solve_path
from afts.func_core import Grid
from afts.models import build_moments_sflr, build_moments_vfar, step1_bases
from afts.sim_bench import gamma_grid, gen_panel, gen_sflr, gen_var_scores, gen_vfar_transition


def build_problems():
    grid = Grid.uniform(0.0, 1.0, 101)
    problems = {}
    for p, n, tag in ((10, 200, "small"), (40, 400, "benchmark-scale")):
        trans = gen_vfar_transition(p, 1)
        scores25 = gen_var_scores(n, p, trans, 2)
        _, panel, _ = gen_panel(scores25, grid, 3)
        y, _ = gen_sflr(scores25, grid, 4)
        bases, sp = step1_bases(panel, L=3)
        problems[f"sflr moments ({tag}: p={p}, n={n})"] = (
            "admm",
            build_moments_sflr(sp, y, 3),
        )
        problems[f"vfar row moments ({tag}: p={p}, n={n})"] = (
            "admm",
            build_moments_vfar(sp, 0, 1, 3),
        )
        problems[f"group lasso ({tag}: p={p}, n={n})"] = (
            "fista",
            (sp.scores, y, sp.offsets),
        )
    return problems


def time_admm(sys, backend, repeats):
    grid_g = gamma_grid(sys.gamma_max(), 15, 1e-2)
    cfg = RmdConfig(backend=backend, feas_tol=1e-5, rel_obj_tol=1e-6, max_iter=2500)
    solve_path(sys, grid_g[:2], cfg)  # compile / warm caches
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        solve_path(sys, grid_g, cfg)
        best = min(best, time.perf_counter() - t0)
    return best


def time_fista(data, backend, repeats):
    X, y, off = data
    lam_max = GroupLassoProblem(
        design=X, response=y, offsets=off, penalty=0.0
    ).lambda_max()
    cfg = FistaConfig(backend=backend, max_iter=4000, tol=1e-8)
    lams = gamma_grid(lam_max, 15, 1e-2)
    problem = GroupLassoProblem(design=X, response=y, offsets=off, penalty=float(lams[1]))
    fista_group_lasso(problem, cfg)  # compile
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for lam in lams:
            fista_group_lasso(
                GroupLassoProblem(design=X, response=y, offsets=off, penalty=float(lam)),
                cfg,
            )
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    if not HAVE_NUMBA:
        print("numba is not importable; only the numpy fallback can run")
        return
    problems = build_problems()
    rows = []
    for name, (kind, payload) in problems.items():
        timer = time_admm if kind == "admm" else time_fista
        t_np = timer(payload, "numpy", args.repeats)
        t_nb = timer(payload, "numba", args.repeats)
        rows.append((name, t_np, t_nb, t_np / t_nb))
    width = max(len(r[0]) for r in rows) + 2
    print(f"{'problem':<{width}} {'numpy [s]':>10} {'numba [s]':>10} {'speedup':>8}")
    for name, t_np, t_nb, ratio in rows:
        print(f"{name:<{width}} {t_np:>10.3f} {t_nb:>10.3f} {ratio:>7.1f}x")


if __name__ == "__main__":
    main()
