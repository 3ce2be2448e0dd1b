"""Step 2: the block regularized minimum-distance (RMD) estimator.

Data structures for blocked linear moment systems g(theta) = G theta + g(0)
and a solver for

    minimize   sum_j ||theta_j||_F
    subject to max_i ||G_i theta + g_i(0)||_F <= gamma

where j ranges over block columns (one per series) and i over block rows
(one per instrument lag/series pair). The solver is linearized ADMM: the
splitting variable is z = G theta + g(0), the z-update projects block rows
onto Frobenius balls of radius gamma, and the theta-update group
soft-thresholds a gradient step whose size is bounded by the squared
spectral norm of G. Every subproblem is closed form, the iteration schedule
is fixed, and there are no randomized steps, so results are deterministic
given the configuration.

Also provides desk-scale identification diagnostics: smallest and largest
singular values over blocked submatrices by exhaustive subset enumeration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from ._accel import get_admm_kernel, power_iteration_sq_norm, resolve_backend
from .errors import (
    CapabilityError,
    ConvergenceError,
    DataError,
    DomainError,
    InfeasibleError,
    StructureError,
)


def _as_offsets(sizes_or_offsets) -> np.ndarray:
    off = np.ascontiguousarray(sizes_or_offsets, dtype=np.int64)
    if off.ndim != 1 or off.size < 2 or off[0] != 0 or np.any(np.diff(off) <= 0):
        raise StructureError("offsets must start at 0 and strictly increase")
    return off


@dataclass(frozen=True)
class MomentSystem:
    """Blocked linear moment map g(theta) = G theta + g0.

    G has q block rows (heights row_offsets diffs) and p block columns
    (widths col_offsets diffs); g0 has the same block rows and width d_tilde.
    """

    G: np.ndarray = field(repr=False)
    g0: np.ndarray = field(repr=False)
    row_offsets: np.ndarray
    col_offsets: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        G = np.ascontiguousarray(self.G, dtype=np.float64)
        g0 = np.ascontiguousarray(self.g0, dtype=np.float64)
        ro = _as_offsets(self.row_offsets)
        co = _as_offsets(self.col_offsets)
        if G.ndim != 2 or g0.ndim != 2:
            raise StructureError("G and g0 must be 2-D")
        if G.shape[0] != g0.shape[0]:
            raise StructureError("G and g0 must share the row count")
        if ro[-1] != G.shape[0] or co[-1] != G.shape[1]:
            raise StructureError("offsets must cover the matrix dimensions")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(g0))):
            raise DataError("moment system entries must be finite")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g0", g0)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_offsets", co)

    @property
    def q(self) -> int:
        return self.row_offsets.size - 1

    @property
    def p(self) -> int:
        return self.col_offsets.size - 1

    @property
    def d_tilde(self) -> int:
        return self.g0.shape[1]

    def block(self, i: int, j: int) -> np.ndarray:
        return self.G[
            self.row_offsets[i] : self.row_offsets[i + 1],
            self.col_offsets[j] : self.col_offsets[j + 1],
        ]

    def g0_block(self, i: int) -> np.ndarray:
        return self.g0[self.row_offsets[i] : self.row_offsets[i + 1]]

    def gamma_max(self) -> float:
        """Smallest gamma at which theta = 0 is feasible."""
        return float(max(np.linalg.norm(self.g0_block(i)) for i in range(self.q)))

    def feasibility_bounds(self) -> tuple[float, float]:
        """(lower, witness) bracket for the least achievable constraint level.

        Any theta gives max-block residual >= ||G theta + g0||_F / sqrt(q)
        minimized by least squares, so gamma below `lower` is certainly
        infeasible; `witness` is the max-block residual at the least-squares
        point, so any gamma >= witness is certainly feasible. Cached.
        """
        if "feas_bounds" not in self._cache:
            theta_ls, *_ = np.linalg.lstsq(self.G, -self.g0, rcond=None)
            resid = self.G @ theta_ls + self.g0
            sq = np.einsum("ij,ij->i", resid, resid)
            blocks = np.sqrt(np.add.reduceat(sq, self.row_offsets[:-1]))
            witness = float(blocks.max(initial=0.0))
            lower = float(np.sqrt(sq.sum() / self.q))
            self._cache["feas_bounds"] = (lower, witness)
        return self._cache["feas_bounds"]


@dataclass(frozen=True)
class RmdConfig:
    """Solver tolerances; all positive.

    support_rtol scales the largest block norm to give the support cutoff
    (ADMM produces approximately-zero blocks, not exact zeros, near the
    boundary of the active set).
    """

    feas_tol: float = 1e-6
    rel_obj_tol: float = 1e-7
    max_iter: int = 20000
    support_rtol: float = 1e-4
    admm_rho: float = 1.0
    check_every: int = 10
    stall_checks: int = 300
    adapt_every: int = 100
    backend: str | None = None

    def __post_init__(self):
        for name in ("feas_tol", "rel_obj_tol", "support_rtol", "admm_rho"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if min(self.max_iter, self.check_every, self.stall_checks, self.adapt_every) < 1:
            raise DomainError("iteration counts must be positive")


@dataclass(frozen=True)
class BlockSolution:
    """Converged block-sparse iterate with its per-block norms and support."""

    theta: np.ndarray = field(repr=False)
    gamma: float
    col_offsets: np.ndarray
    block_norms: np.ndarray
    support: tuple
    objective: float
    solver_stats: dict = field(repr=False)
    _z: np.ndarray | None = field(default=None, repr=False, compare=False)
    _u: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def p(self) -> int:
        return self.col_offsets.size - 1

    def theta_block(self, j: int) -> np.ndarray:
        return self.theta[self.col_offsets[j] : self.col_offsets[j + 1]]

    def to_json_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "objective": self.objective,
            "support": list(self.support),
            "block_norms": [float(v) for v in self.block_norms],
            "solver_stats": {
                k: (int(v) if isinstance(v, (bool, np.bool_)) else v)
                for k, v in self.solver_stats.items()
            },
        }


def _block_norms(theta: np.ndarray, col_offsets: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", theta, theta)
    return np.sqrt(np.add.reduceat(sq, col_offsets[:-1]))


def residual_norms(sys: MomentSystem, theta: np.ndarray) -> np.ndarray:
    """Per-block-row Frobenius norms of G theta + g0."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 1:
        theta = theta[:, np.newaxis]
    if theta.shape != (sys.G.shape[1], sys.d_tilde):
        raise StructureError(
            f"theta shape {theta.shape} does not match the system "
            f"({sys.G.shape[1]}, {sys.d_tilde})"
        )
    resid = sys.G @ theta + sys.g0
    sq = np.einsum("ij,ij->i", resid, resid)
    return np.sqrt(np.add.reduceat(sq, sys.row_offsets[:-1]))


def _make_solution(sys, gamma, theta, cfg, stats, z=None, u=None) -> BlockSolution:
    norms = _block_norms(theta, sys.col_offsets)
    max_norm = float(norms.max(initial=0.0))
    cutoff = cfg.support_rtol * max_norm
    support = tuple(int(j) for j in np.nonzero(norms > cutoff)[0])
    return BlockSolution(
        theta=theta,
        gamma=float(gamma),
        col_offsets=sys.col_offsets,
        block_norms=norms,
        support=support,
        objective=float(norms.sum()),
        solver_stats=stats,
        _z=z,
        _u=u,
    )


def solve(
    sys: MomentSystem,
    gamma: float,
    cfg: RmdConfig | None = None,
    warm: BlockSolution | None = None,
) -> BlockSolution:
    """Solve the block RMD program at one regularization level.

    Returns an iterate whose constraint violation is at most
    gamma + cfg.feas_tol. Raises InfeasibleError when the constraint set is
    detected empty (the residual stalls above the level with no dual
    progress, or gamma = 0 on an inconsistent system), and ConvergenceError
    (carrying the last iterate) when max_iter is hit.
    """
    if cfg is None:
        cfg = RmdConfig()
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")

    C = sys.G.shape[1]
    dt = sys.d_tilde
    zero_resid = residual_norms(sys, np.zeros((C, dt)))
    if float(zero_resid.max(initial=0.0)) <= gamma:
        stats = {
            "iterations": 0,
            "primal_residual": 0.0,
            "dual_residual": 0.0,
            "violation": float(zero_resid.max(initial=0.0) - gamma),
            "converged": True,
            "rho": cfg.admm_rho,
            "backend": "trivial",
        }
        return _make_solution(sys, gamma, np.zeros((C, dt)), cfg, stats)

    lower, witness = sys.feasibility_bounds()
    if gamma < lower - max(cfg.feas_tol, 1e-12 * (1.0 + lower)):
        raise InfeasibleError(
            f"gamma = {gamma:.3e} is below the least-squares certificate "
            f"{lower:.3e}: constraint set is empty"
        )
    if gamma == 0.0 and witness > max(cfg.feas_tol, 1e-8 * (1.0 + sys.gamma_max())):
        raise InfeasibleError(
            f"gamma = 0 but the moment system is inconsistent "
            f"(least-squares block residual {witness:.3e})"
        )

    if "sigma_sq" not in sys._cache:
        sys._cache["sigma_sq"] = power_iteration_sq_norm(sys.G)
    sigma_sq = sys._cache["sigma_sq"]
    step = 0.95 / sigma_sq if sigma_sq > 0 else 1.0

    rho0 = float(cfg.admm_rho)
    if warm is not None and warm._z is not None:
        theta0 = warm.theta.copy()
        z0 = warm._z.copy()
        u0 = warm._u.copy()
        rho0 = float(warm.solver_stats.get("rho", rho0))
    else:
        theta0 = np.zeros((C, dt))
        z0 = sys.g0.copy()
        u0 = np.zeros_like(sys.g0)

    window_checks = max(1, int(np.ceil(50 / cfg.check_every)))
    backend_name = resolve_backend(cfg.backend)
    kernel = get_admm_kernel(backend_name)
    theta, z, u, iters, pri, dual, obj, viol, rho, status = kernel(
        sys.G,
        sys.g0,
        sys.row_offsets,
        sys.col_offsets,
        float(gamma),
        rho0,
        float(step),
        float(cfg.feas_tol),
        float(cfg.rel_obj_tol),
        int(cfg.max_iter),
        theta0,
        z0,
        u0,
        int(cfg.check_every),
        int(window_checks),
        int(cfg.stall_checks),
        int(cfg.adapt_every),
    )
    stats = {
        "iterations": int(iters),
        "primal_residual": float(pri),
        "dual_residual": float(dual),
        "violation": float(viol),
        "converged": status == 0,
        "rho": float(rho),
        "backend": backend_name,
    }
    if status == 2:
        raise InfeasibleError(
            f"block residual stalled at gamma + {viol:.3e} with no dual progress"
        )
    solution = _make_solution(sys, gamma, theta, cfg, stats, z=z, u=u)
    if status == 1:
        raise ConvergenceError(
            f"no convergence within {cfg.max_iter} iterations "
            f"(violation {viol:.3e}, primal {pri:.3e})",
            best=solution,
        )
    return solution


def solve_path(
    sys: MomentSystem,
    gammas,
    cfg: RmdConfig | None = None,
) -> list:
    """Solve along a descending gamma grid with warm starts.

    Entries are BlockSolution objects; a gamma whose solve hits the
    iteration cap contributes its best iterate (solver_stats['converged']
    False), and a gamma detected infeasible contributes None. Because the
    feasible sets are nested in gamma, every entry after the first detected
    infeasibility is None without further work.
    """
    gammas = [float(g) for g in gammas]
    if any(g2 > g1 for g1, g2 in zip(gammas, gammas[1:])):
        raise DomainError("gamma grid must be sorted descending")
    if cfg is None:
        cfg = RmdConfig()
    out = []
    warm = None
    for idx, gamma in enumerate(gammas):
        try:
            sol = solve(sys, gamma, cfg, warm=warm)
        except ConvergenceError as err:
            sol = err.best
        except InfeasibleError:
            out.extend([None] * (len(gammas) - idx))
            break
        out.append(sol)
        warm = sol
    return out


# ---------------------------------------------------------------------------
# Identification diagnostics
# ---------------------------------------------------------------------------

_ENUM_CAP = 12


@dataclass(frozen=True)
class SensitivityDiagnostic:
    """Singular-value diagnostics over blocked submatrices, per mu."""

    s: int
    mu_grid: np.ndarray
    m_values: np.ndarray
    sigma_min: np.ndarray
    sigma_max: np.ndarray
    ratios: np.ndarray
    kappa_lower_proxy: float


def _submatrix(sys: MomentSystem, rows, cols) -> np.ndarray:
    ridx = np.concatenate(
        [np.arange(sys.row_offsets[i], sys.row_offsets[i + 1]) for i in rows]
    )
    cidx = np.concatenate(
        [np.arange(sys.col_offsets[j], sys.col_offsets[j + 1]) for j in cols]
    )
    return sys.G[np.ix_(ridx, cidx)]


_ENUM_BUDGET = 200_000


def _subsets_up_to(count: int, m: int):
    for size in range(1, min(m, count) + 1):
        yield from combinations(range(count), size)


def _sigma_extremes(sys: MomentSystem, m: int):
    """Exhaustive min over |M|<=m of max over |J|<=m of sigma_min, plus the
    overall sigma_max, over blocked submatrices.

    Every subset size is enumerated: smallest singular values of ragged
    submatrices are not monotone under row or column growth once a
    submatrix goes wide, so no size can be skipped.
    """
    p, q = sys.p, sys.q
    col_sets = list(_subsets_up_to(p, m))
    row_sets = list(_subsets_up_to(q, m))
    if len(col_sets) * len(row_sets) > _ENUM_BUDGET:
        raise CapabilityError(
            f"{len(col_sets) * len(row_sets)} submatrices exceed the "
            f"enumeration budget {_ENUM_BUDGET}"
        )
    sig_min = np.inf
    sig_max = 0.0
    for cols in col_sets:
        inner_best = 0.0
        for rows in row_sets:
            svals = np.linalg.svd(_submatrix(sys, rows, cols), compute_uv=False)
            inner_best = max(inner_best, float(svals[-1]))
            sig_max = max(sig_max, float(svals[0]))
        sig_min = min(sig_min, inner_best)
    return sig_min, sig_max


def sensitivity_diagnostic(sys: MomentSystem, s: int, mu_grid) -> SensitivityDiagnostic:
    """Exhaustive-enumeration singular-value diagnostics for identification.

    For each mu in the grid, sets m = ceil(16 s / mu^2) and reports
    sigma_min(m, G), sigma_max(m, G), and their ratio. The proxy is the
    largest grid value whose ratio certifies itself (ratio >= mu); it is a
    dimensionless strength-of-identification summary, not a bound with a
    sharp constant.
    """
    if sys.p > _ENUM_CAP or sys.q > _ENUM_CAP:
        raise CapabilityError(
            f"subset enumeration capped at {_ENUM_CAP} block rows/columns"
        )
    if s < 1:
        raise DomainError("s must be a positive integer")
    mu_grid = np.atleast_1d(np.asarray(mu_grid, dtype=np.float64))
    if np.any(mu_grid <= 0):
        raise DomainError("mu values must be positive")
    m_values = np.ceil(16.0 * s / mu_grid**2).astype(np.int64)
    cap = min(sys.p, sys.q)
    if np.any(m_values > cap):
        raise CapabilityError(
            f"m = ceil(16 s / mu^2) exceeds min(p, q) = {cap} for some mu"
        )
    smin = np.empty(mu_grid.size)
    smax = np.empty(mu_grid.size)
    cache: dict[int, tuple] = {}
    for idx, m in enumerate(m_values):
        m = int(m)
        if m not in cache:
            cache[m] = _sigma_extremes(sys, m)
        smin[idx], smax[idx] = cache[m]
    ratios = np.where(smax > 0, smin / np.maximum(smax, 1e-300), 0.0)
    certified = mu_grid[ratios >= mu_grid]
    proxy = float(certified.max()) if certified.size else 0.0
    return SensitivityDiagnostic(
        s=s,
        mu_grid=mu_grid,
        m_values=m_values,
        sigma_min=smin,
        sigma_max=smax,
        ratios=ratios,
        kappa_lower_proxy=proxy,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_moment_system(sys: MomentSystem, g_path, g0_path) -> None:
    """CSV triplets: G as (block_row, block_col, row, col, value) and g0 as
    (block_row, row, col, value); row/col are within-block indices."""
    with open(g_path, "w", newline="") as fh:
        fh.write("block_row,block_col,row,col,value\n")
        for i in range(sys.q):
            for j in range(sys.p):
                blk = sys.block(i, j)
                for r in range(blk.shape[0]):
                    for c in range(blk.shape[1]):
                        fh.write(f"{i},{j},{r},{c},{float(blk[r, c])!r}\n")
    with open(g0_path, "w", newline="") as fh:
        fh.write("block_row,row,col,value\n")
        for i in range(sys.q):
            blk = sys.g0_block(i)
            for r in range(blk.shape[0]):
                for c in range(blk.shape[1]):
                    fh.write(f"{i},{r},{c},{float(blk[r, c])!r}\n")


def load_moment_system(g_path, g0_path) -> MomentSystem:
    g_rows = []
    with open(g_path, "r", newline="") as fh:
        header = fh.readline().strip()
        if header != "block_row,block_col,row,col,value":
            raise DataError(f"unexpected G CSV header: {header!r}")
        for line in fh:
            line = line.strip()
            if line:
                i, j, r, c, v = line.split(",")
                g_rows.append((int(i), int(j), int(r), int(c), float(v)))
    g0_rows = []
    with open(g0_path, "r", newline="") as fh:
        header = fh.readline().strip()
        if header != "block_row,row,col,value":
            raise DataError(f"unexpected g0 CSV header: {header!r}")
        for line in fh:
            line = line.strip()
            if line:
                i, r, c, v = line.split(",")
                g0_rows.append((int(i), int(r), int(c), float(v)))
    if not g_rows or not g0_rows:
        raise DataError("moment system CSV files contain no rows")
    q = max(r[0] for r in g_rows) + 1
    p = max(r[1] for r in g_rows) + 1
    row_h = np.zeros(q, dtype=np.int64)
    col_w = np.zeros(p, dtype=np.int64)
    for i, j, r, c, _ in g_rows:
        row_h[i] = max(row_h[i], r + 1)
        col_w[j] = max(col_w[j], c + 1)
    ro = np.concatenate([[0], np.cumsum(row_h)]).astype(np.int64)
    co = np.concatenate([[0], np.cumsum(col_w)]).astype(np.int64)
    dt = max(r[2] for r in g0_rows) + 1
    G = np.zeros((int(ro[-1]), int(co[-1])))
    g0 = np.zeros((int(ro[-1]), dt))
    for i, j, r, c, v in g_rows:
        G[ro[i] + r, co[j] + c] = v
    for i, r, c, v in g0_rows:
        g0[ro[i] + r, c] = v
    return MomentSystem(G=G, g0=g0, row_offsets=ro, col_offsets=co)


def save_solution_json(solution: BlockSolution, path) -> None:
    with open(path, "w") as fh:
        json.dump(solution.to_json_dict(), fh, indent=2, sort_keys=True)


def tightened(cfg: RmdConfig, **kwargs) -> RmdConfig:
    """Convenience: a copy of cfg with selected fields replaced."""
    return replace(cfg, **kwargs)
