"""Model assembly: SFLR, FFLR, and VFAR on estimated score panels.

Builds blocked moment systems from lagged score cross-products, fits them
with the block RMD solver, and linearly recovers functional coefficients
from the block estimates and the Step-1 bases. The same fit containers are
reused by the covariance-based baseline (method="cov"), which swaps the
moment route for penalized least squares but recovers coefficients the same
way.

Instrument validity (lagged scores uncorrelated with the model error) is an
assumption of the moment route; it is not checkable at runtime and fits are
computed regardless.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import block_rmd
from .autocov_basis import (
    AutocovBasis,
    ScorePanel,
    build_autocov_basis,
    build_fpca_basis,
    project_scores,
)
from .block_rmd import MomentSystem, RmdConfig
from .errors import DomainError, StructureError
from .func_core import FunctionalPanel, Grid, Kernel


# ---------------------------------------------------------------------------
# Step 1 drivers
# ---------------------------------------------------------------------------


def step1_bases(
    panel: FunctionalPanel,
    L: int = 3,
    threshold: float = 0.9,
    d_max: int = 10,
) -> tuple[list[AutocovBasis], ScorePanel]:
    """Lag-pooled basis and scores for every series of a panel."""
    bases = [
        build_autocov_basis(panel, j, L=L, threshold=threshold, d_max=d_max)
        for j in range(panel.p)
    ]
    return bases, project_scores(panel, bases)


def fpca_bases(
    panel: FunctionalPanel,
    threshold: float = 0.9,
    d_max: int = 10,
) -> tuple[list[AutocovBasis], ScorePanel]:
    """Covariance-route (lag-0 FPCA) bases and scores for every series."""
    bases = [
        build_fpca_basis(panel, j, threshold=threshold, d_max=d_max)
        for j in range(panel.p)
    ]
    return bases, project_scores(panel, bases)


# ---------------------------------------------------------------------------
# Moment systems
# ---------------------------------------------------------------------------


def _lag_cross(scores: np.ndarray, h: int) -> np.ndarray:
    """(n-h)^{-1} sum_t eta_{t+h} (x) eta_t, stacked over all columns."""
    n = scores.shape[0]
    return scores[h:].T @ scores[: n - h] / (n - h)


def build_moments_sflr(scores: ScorePanel, y: np.ndarray, L: int) -> MomentSystem:
    """Moment system for the scalar-response model.

    Block row i = (h-1)p + k holds the lag-h cross moments of series k's
    scores with the response (constant part) and with every series' scores
    (linear part, negated), so that g(b) = G b + g(0) is the empirical
    moment vector.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = scores.n
    if y.shape[0] != n:
        raise StructureError("response length must match the score panel")
    if L < 1 or L >= n:
        raise DomainError(f"lag budget L={L} must satisfy 1 <= L < n={n}")
    D = scores.scores.shape[1]
    G = np.vstack([-_lag_cross(scores.scores, h) for h in range(1, L + 1)])
    g0 = np.vstack(
        [
            (scores.scores[h:].T @ y[: n - h] / (n - h))[:, np.newaxis]
            for h in range(1, L + 1)
        ]
    )
    row_off = np.concatenate(
        [scores.offsets[:-1] + h * D for h in range(L)] + [[L * D]]
    ).astype(np.int64)
    return MomentSystem(G=G, g0=g0, row_offsets=row_off, col_offsets=scores.offsets)


def build_moments_fflr(scores: ScorePanel, zeta: np.ndarray, L: int) -> MomentSystem:
    """Moment system for the functional-response model.

    Identical linear part to the scalar case; the constant part is the
    lag-h cross moment of instrument scores with the response scores, one
    d_k x d_tilde block per instrument.
    """
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.ndim == 1:
        zeta = zeta[:, np.newaxis]
    n = scores.n
    if zeta.shape[0] != n:
        raise StructureError("response scores must match the score panel length")
    if L < 1 or L >= n:
        raise DomainError(f"lag budget L={L} must satisfy 1 <= L < n={n}")
    D = scores.scores.shape[1]
    G = np.vstack([-_lag_cross(scores.scores, h) for h in range(1, L + 1)])
    g0 = np.vstack(
        [scores.scores[h:].T @ zeta[: n - h] / (n - h) for h in range(1, L + 1)]
    )
    row_off = np.concatenate(
        [scores.offsets[:-1] + h * D for h in range(L)] + [[L * D]]
    ).astype(np.int64)
    return MomentSystem(G=G, g0=g0, row_offsets=row_off, col_offsets=scores.offsets)


class VfarMomentBuilder:
    """Shared pieces of the p row problems of a VFAR fit.

    Instruments are scores at lags H+1 .. H+L, strictly older than every
    regressor lag: they are uncorrelated with the autoregression innovation
    (unlike leads, whose cross moment with the innovation is the lag-h
    transition times the innovation covariance), and every moment term pairs
    scores at distinct times, so the additive white noise drops from all
    expectations. The linear part G and all lag cross-moments are
    row-independent, so one builder serves every target row; per-row systems
    share the G array and its cached spectral-norm estimate.
    """

    def __init__(self, scores: ScorePanel, H: int, L: int):
        n = scores.n
        if H < 1 or L < 1 or n <= H + L:
            raise DomainError(f"need n > H + L (n={n}, H={H}, L={L})")
        self.scores = scores
        self.H = H
        self.L = L
        D = scores.scores.shape[1]
        s = scores.scores
        g_rows = []
        self._g0_full = []
        for h in range(1, L + 1):
            # response rows t = H+h..n-1 (0-based), instruments at t-H-h
            m = n - H - h
            instr = s[: n - H - h]
            self._g0_full.append(instr.T @ s[H + h : n] / m)
            g_rows.append(
                np.hstack(
                    [
                        -instr.T @ s[H + h - hp : n - hp] / m
                        for hp in range(1, H + 1)
                    ]
                )
            )
        self.G = np.vstack(g_rows)
        self.row_offsets = np.concatenate(
            [scores.offsets[:-1] + h * D for h in range(L)] + [[L * D]]
        ).astype(np.int64)
        self.col_offsets = np.concatenate(
            [scores.offsets[:-1] + hp * D for hp in range(H)] + [[H * D]]
        ).astype(np.int64)
        self._shared_cache: dict = {}

    def system(self, j: int) -> MomentSystem:
        off = self.scores.offsets
        g0 = np.vstack([blk[:, off[j] : off[j + 1]] for blk in self._g0_full])
        sys = MomentSystem(
            G=self.G,
            g0=g0,
            row_offsets=self.row_offsets,
            col_offsets=self.col_offsets,
        )
        if "sigma_sq" not in self._shared_cache:
            from ._accel import power_iteration_sq_norm

            self._shared_cache["sigma_sq"] = power_iteration_sq_norm(self.G)
        sys._cache["sigma_sq"] = self._shared_cache["sigma_sq"]
        return sys


def build_moments_vfar(scores: ScorePanel, j: int, H: int, L: int) -> MomentSystem:
    """Moment system for row j of the vector functional autoregression.

    Instruments are scores at lags H+1..H+L, regressors at lags 1..H; the
    empirical average for instrument lag H+h runs over the fully observed
    tuples t = H+h+1..n with normalizer (n-H-h). The linear part does not
    depend on the target row; only the constant part (and the target width)
    does.
    """
    return VfarMomentBuilder(scores, H, L).system(j)


def vfar_design_row(scores: np.ndarray, t: int, H: int) -> np.ndarray:
    """Stacked lagged score vector (eta_{t-1}, ..., eta_{t-H})."""
    return np.concatenate([scores[t - hp] for hp in range(1, H + 1)])


# ---------------------------------------------------------------------------
# Fit containers
# ---------------------------------------------------------------------------


@dataclass
class SflrFit:
    """Scalar-on-function fit: coefficient curves beta_j on the grid."""

    method: str
    bases: list
    coef: np.ndarray  # (D,) stacked blocks, d_tilde = 1
    gamma: float
    support: tuple
    stats: dict = field(repr=False)
    L: int
    threshold: float
    train_y_mean: float | None = None

    @property
    def grid(self) -> Grid:
        return self.bases[0].grid

    @property
    def offsets(self) -> np.ndarray:
        dims = [b.d for b in self.bases]
        return np.concatenate([[0], np.cumsum(dims)]).astype(np.int64)

    def coef_block(self, j: int) -> np.ndarray:
        off = self.offsets
        return self.coef[off[j] : off[j + 1]]

    def beta_values(self) -> np.ndarray:
        """(p, G) array of recovered coefficient curves."""
        out = np.zeros((len(self.bases), self.grid.size))
        for j, basis in enumerate(self.bases):
            out[j] = self.coef_block(j) @ basis.functions
        return out


@dataclass
class FflrFit:
    """Function-on-function fit: coefficient surfaces beta_j(u, v)."""

    method: str
    bases: list
    response_basis: AutocovBasis
    coef: np.ndarray  # (D, d_tilde)
    gamma: float
    support: tuple
    stats: dict = field(repr=False)
    L: int
    threshold: float

    @property
    def grid_u(self) -> Grid:
        return self.bases[0].grid

    @property
    def grid_v(self) -> Grid:
        return self.response_basis.grid

    @property
    def d_tilde(self) -> int:
        return self.response_basis.d

    @property
    def offsets(self) -> np.ndarray:
        dims = [b.d for b in self.bases]
        return np.concatenate([[0], np.cumsum(dims)]).astype(np.int64)

    def coef_block(self, j: int) -> np.ndarray:
        off = self.offsets
        return self.coef[off[j] : off[j + 1]]

    def beta_kernel(self, j: int) -> Kernel:
        vals = self.bases[j].functions.T @ self.coef_block(j) @ self.response_basis.functions
        return Kernel(self.grid_u, self.grid_v, vals)


@dataclass
class VfarFit:
    """Vector functional autoregression fit, one block solution per row."""

    method: str
    bases: list
    coef_rows: list  # per row j: (H*D, d_j) array or None on failure
    gammas: np.ndarray
    supports: list  # per row j: tuple of (j_prime, h_prime) pairs
    stats: list = field(repr=False)
    row_errors: dict
    H: int
    L: int
    threshold: float

    @property
    def grid(self) -> Grid:
        return self.bases[0].grid

    @property
    def p(self) -> int:
        return len(self.bases)

    @property
    def offsets(self) -> np.ndarray:
        dims = [b.d for b in self.bases]
        return np.concatenate([[0], np.cumsum(dims)]).astype(np.int64)

    def omega_block(self, j: int, j_prime: int, h_prime: int) -> np.ndarray:
        """Score-space transition block for target row j, source j', lag h'."""
        if self.coef_rows[j] is None:
            raise DomainError(f"row {j} has no solution: {self.row_errors.get(j)}")
        off = self.offsets
        D = int(off[-1])
        start = (h_prime - 1) * D
        return self.coef_rows[j][start + off[j_prime] : start + off[j_prime + 1]]

    def a_kernel(self, j: int, j_prime: int, h_prime: int) -> Kernel:
        blk = self.omega_block(j, j_prime, h_prime)
        vals = self.bases[j_prime].functions.T @ blk @ self.bases[j].functions
        return Kernel(self.grid, self.grid, vals)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def _fit_from_system(sys, gamma, gamma_grid, rmd_cfg, wrap):
    if (gamma is None) == (gamma_grid is None):
        raise DomainError("pass exactly one of gamma, gamma_grid")
    if gamma is not None:
        return wrap(block_rmd.solve(sys, float(gamma), rmd_cfg))
    sols = block_rmd.solve_path(sys, gamma_grid, rmd_cfg)
    return [None if s is None else wrap(s) for s in sols]


def fit_sflr(
    panel: FunctionalPanel,
    y,
    *,
    L: int = 3,
    threshold: float = 0.9,
    d_max: int = 10,
    gamma: float | None = None,
    gamma_grid=None,
    rmd_cfg: RmdConfig | None = None,
    bases: list | None = None,
    scores: ScorePanel | None = None,
):
    """Three-step scalar-on-function fit; returns a fit per gamma requested.

    Precomputed Step-1 output can be passed through ``bases``/``scores`` to
    share work across regularization levels or tuning splits.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if bases is None or scores is None:
        bases, scores = step1_bases(panel, L=L, threshold=threshold, d_max=d_max)
    sys = build_moments_sflr(scores, y, L)
    y_mean = float(y.mean())

    def wrap(sol):
        return SflrFit(
            method="auto",
            bases=bases,
            coef=sol.theta[:, 0].copy(),
            gamma=sol.gamma,
            support=sol.support,
            stats=dict(sol.solver_stats),
            L=L,
            threshold=threshold,
            train_y_mean=y_mean,
        )

    return _fit_from_system(sys, gamma, gamma_grid, rmd_cfg, wrap)


def predict_sflr(fit: SflrFit, panel: FunctionalPanel) -> np.ndarray:
    """Score-space predictions: new curves projected onto the fit's bases."""
    scores = project_scores(panel, fit.bases)
    return scores.scores @ fit.coef


def fit_fflr(
    panel_x: FunctionalPanel,
    panel_y: FunctionalPanel,
    *,
    L: int = 3,
    threshold: float = 0.9,
    d_max: int = 10,
    gamma: float | None = None,
    gamma_grid=None,
    rmd_cfg: RmdConfig | None = None,
    response_route: str = "fpca",
    bases: list | None = None,
    scores: ScorePanel | None = None,
    response_basis: AutocovBasis | None = None,
):
    """Function-on-function fit.

    The response panel must hold a single series. Its basis comes from
    lag-0 FPCA by default; response_route="autocov" switches to the lagged
    route for serially dependent response noise.
    """
    if panel_y.p != 1:
        raise StructureError("response panel must hold exactly one series")
    if panel_y.n != panel_x.n:
        raise StructureError("predictor and response panels must align in time")
    if bases is None or scores is None:
        bases, scores = step1_bases(panel_x, L=L, threshold=threshold, d_max=d_max)
    if response_basis is None:
        if response_route == "fpca":
            response_basis = build_fpca_basis(
                panel_y, 0, threshold=threshold, d_max=d_max
            )
        elif response_route == "autocov":
            response_basis = build_autocov_basis(
                panel_y, 0, L=L, threshold=threshold, d_max=d_max
            )
        else:
            raise DomainError(f"unknown response route {response_route!r}")
    zeta = project_scores(panel_y, [response_basis]).scores
    sys = build_moments_fflr(scores, zeta, L)

    def wrap(sol):
        return FflrFit(
            method="auto",
            bases=bases,
            response_basis=response_basis,
            coef=sol.theta.copy(),
            gamma=sol.gamma,
            support=sol.support,
            stats=dict(sol.solver_stats),
            L=L,
            threshold=threshold,
        )

    return _fit_from_system(sys, gamma, gamma_grid, rmd_cfg, wrap)


def predict_fflr_scores(fit: FflrFit, panel: FunctionalPanel) -> np.ndarray:
    """(n, d_tilde) score-space predictions of the response expansion."""
    scores = project_scores(panel, fit.bases)
    return scores.scores @ fit.coef


def predict_fflr(fit: FflrFit, panel: FunctionalPanel) -> FunctionalPanel:
    """Predicted response curves on the response grid."""
    zeta_hat = predict_fflr_scores(fit, panel)
    curves = zeta_hat @ fit.response_basis.functions
    return FunctionalPanel(fit.grid_v, curves[:, np.newaxis, :])


def fit_vfar_row(
    scores: ScorePanel,
    bases: list,
    j: int,
    *,
    H: int = 1,
    L: int = 3,
    gamma: float | None = None,
    gamma_grid=None,
    rmd_cfg: RmdConfig | None = None,
    sys: MomentSystem | None = None,
):
    """Solve the row-j block RMD problem; returns BlockSolution(s)."""
    if sys is None:
        sys = build_moments_vfar(scores, j, H, L)
    if gamma_grid is not None:
        return block_rmd.solve_path(sys, gamma_grid, rmd_cfg)
    return block_rmd.solve(sys, float(gamma), rmd_cfg)


def _vfar_supports(sol, p):
    """Map block-column support indices to (j_prime, h_prime) pairs."""
    pairs = []
    for idx in sol.support:
        h_prime = idx // p + 1
        j_prime = idx % p
        pairs.append((j_prime, h_prime))
    return tuple(pairs)


def fit_vfar(
    panel: FunctionalPanel,
    *,
    H: int = 1,
    L: int = 3,
    threshold: float = 0.9,
    d_max: int = 10,
    gammas=None,
    rmd_cfg: RmdConfig | None = None,
    bases: list | None = None,
    scores: ScorePanel | None = None,
    n_jobs: int = 1,
) -> VfarFit:
    """p independent row problems; a failed row is recorded, not fatal.

    ``gammas`` is a scalar (shared) or a length-p vector of per-row levels.
    Rows are solved in parallel when n_jobs > 1 and gathered by row index.
    """
    if panel.n <= H + L:
        raise DomainError(f"need n > H + L (n={panel.n}, H={H}, L={L})")
    if bases is None or scores is None:
        bases, scores = step1_bases(panel, L=L, threshold=threshold, d_max=d_max)
    p = len(bases)
    gam = np.asarray(gammas, dtype=np.float64)
    if gam.ndim == 0:
        gam = np.full(p, float(gam))
    if gam.shape != (p,):
        raise StructureError("gammas must be a scalar or length-p vector")
    builder = VfarMomentBuilder(scores, H, L)

    def run(j):
        try:
            sol = fit_vfar_row(
                scores,
                bases,
                j,
                H=H,
                L=L,
                gamma=gam[j],
                rmd_cfg=rmd_cfg,
                sys=builder.system(j),
            )
            return j, sol, None
        except Exception as err:  # noqa: BLE001 - row failures are reported
            return j, None, f"{type(err).__name__}: {err}"

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, range(p)))
    else:
        results = [run(j) for j in range(p)]
    results.sort(key=lambda r: r[0])

    coef_rows, supports, stats, row_errors = [], [], [], {}
    for j, sol, err in results:
        if sol is None:
            coef_rows.append(None)
            supports.append(())
            stats.append({})
            row_errors[j] = err
        else:
            coef_rows.append(sol.theta.copy())
            supports.append(_vfar_supports(sol, p))
            stats.append(dict(sol.solver_stats))
    return VfarFit(
        method="auto",
        bases=bases,
        coef_rows=coef_rows,
        gammas=gam,
        supports=supports,
        stats=stats,
        row_errors=row_errors,
        H=H,
        L=L,
        threshold=threshold,
    )


def predict_vfar_scores(fit: VfarFit, scores_recent: np.ndarray) -> np.ndarray:
    """One-step-ahead score prediction from the last H score vectors.

    ``scores_recent`` rows are ordered oldest to newest; the last H rows
    feed the prediction. Rows without a solution predict zero.
    """
    scores_recent = np.atleast_2d(np.asarray(scores_recent, dtype=np.float64))
    off = fit.offsets
    D = int(off[-1])
    if scores_recent.shape[0] < fit.H or scores_recent.shape[1] != D:
        raise DomainError(
            f"need at least H={fit.H} rows of width {D} to predict"
        )
    xrow = np.concatenate([scores_recent[-hp] for hp in range(1, fit.H + 1)])
    out = np.zeros(D)
    for j in range(fit.p):
        if fit.coef_rows[j] is not None:
            out[off[j] : off[j + 1]] = fit.coef_rows[j].T @ xrow
    return out


# ---------------------------------------------------------------------------
# Fit persistence: JSON manifest + CSV coefficient/basis tables
# ---------------------------------------------------------------------------


def _grid_to_dict(grid: Grid) -> dict:
    return {
        "points": [float(x) for x in grid.points],
        "weights": [float(w) for w in grid.weights],
    }


def _grid_from_dict(d: dict) -> Grid:
    return Grid(np.asarray(d["points"]), np.asarray(d["weights"]))


def _save_bases(bases, prefix, outdir) -> dict:
    eig = os.path.join(outdir, f"{prefix}_eigenvalues.csv")
    fun = os.path.join(outdir, f"{prefix}_functions.csv")
    from .autocov_basis import save_bases_csv

    save_bases_csv(bases, eig, fun)
    return {
        "eigenvalues": os.path.basename(eig),
        "functions": os.path.basename(fun),
        "d": [b.d for b in bases],
        "series": [b.series for b in bases],
        "lags": [b.lags for b in bases],
    }


def _load_bases(meta: dict, grid: Grid, outdir) -> list:
    eigvals = {}
    with open(os.path.join(outdir, meta["eigenvalues"]), "r") as fh:
        fh.readline()
        for line in fh:
            line = line.strip()
            if line:
                j, l, lam = line.split(",")
                eigvals.setdefault(int(j), {})[int(l)] = float(lam)
    with open(os.path.join(outdir, meta["functions"]), "r") as fh:
        header = fh.readline().strip().split(",")[1:]
        cols = np.array([[float(v) for v in line.strip().split(",")[1:]] for line in fh])
    bases = []
    col_idx = 0
    for pos, j in enumerate(meta["series"]):
        d = meta["d"][pos]
        lam_map = eigvals[j]
        lam = np.array([lam_map[l] for l in range(len(lam_map))])
        funcs = cols[:, col_idx : col_idx + d].T
        col_idx += d
        bases.append(
            AutocovBasis(
                series=j,
                eigenvalues=lam,
                functions=funcs,
                grid=grid,
                lags=meta["lags"][pos],
            )
        )
    return bases


def _save_coef_csv(coef: np.ndarray, offsets: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("j,row,col,value\n")
        for j in range(offsets.size - 1):
            blk = coef[offsets[j] : offsets[j + 1]]
            for r in range(blk.shape[0]):
                for c in range(blk.shape[1]):
                    fh.write(f"{j},{r},{c},{float(blk[r, c])!r}\n")


def _load_coef_csv(path, offsets: np.ndarray, d_tilde: int) -> np.ndarray:
    coef = np.zeros((int(offsets[-1]), d_tilde))
    with open(path, "r") as fh:
        fh.readline()
        for line in fh:
            line = line.strip()
            if line:
                j, r, c, v = line.split(",")
                coef[offsets[int(j)] + int(r), int(c)] = float(v)
    return coef


def save_fit(fit, outdir, *, export_kernels: bool = False) -> None:
    """Write a fit directory: manifest.json plus CSV tables.

    SFLR fits export recovered coefficient curves; FFLR fits export
    coefficient surfaces; VFAR surfaces are derivable from the exported
    blocks and bases and are only written when export_kernels is set (they
    are p*p*H full grids).
    """
    os.makedirs(outdir, exist_ok=True)
    manifest: dict = {
        "format_version": 1,
        "method": fit.method,
        "threshold": fit.threshold,
        "L": fit.L,
    }
    if isinstance(fit, SflrFit):
        manifest["model"] = "sflr"
        manifest["gamma"] = fit.gamma
        manifest["support"] = list(fit.support)
        manifest["stats"] = fit.stats
        manifest["train_y_mean"] = fit.train_y_mean
        manifest["grid"] = _grid_to_dict(fit.grid)
        manifest["bases"] = _save_bases(fit.bases, "bases", outdir)
        _save_coef_csv(
            fit.coef[:, np.newaxis], fit.offsets, os.path.join(outdir, "coef.csv")
        )
        betas = fit.beta_values()
        with open(os.path.join(outdir, "beta_curves.csv"), "w", newline="") as fh:
            fh.write("u," + ",".join(f"beta_{j}" for j in range(betas.shape[0])) + "\n")
            for g in range(fit.grid.size):
                vals = ",".join(repr(float(betas[j, g])) for j in range(betas.shape[0]))
                fh.write(f"{float(fit.grid.points[g])!r},{vals}\n")
    elif isinstance(fit, FflrFit):
        manifest["model"] = "fflr"
        manifest["gamma"] = fit.gamma
        manifest["support"] = list(fit.support)
        manifest["stats"] = fit.stats
        manifest["grid"] = _grid_to_dict(fit.grid_u)
        manifest["grid_v"] = _grid_to_dict(fit.grid_v)
        manifest["bases"] = _save_bases(fit.bases, "bases", outdir)
        manifest["response_basis"] = _save_bases(
            [fit.response_basis], "response_basis", outdir
        )
        _save_coef_csv(fit.coef, fit.offsets, os.path.join(outdir, "coef.csv"))
        with open(os.path.join(outdir, "beta_kernels.csv"), "w", newline="") as fh:
            fh.write("j,u_index,v_index,value\n")
            for j in range(len(fit.bases)):
                vals = fit.beta_kernel(j).values
                for ui in range(vals.shape[0]):
                    for vi in range(vals.shape[1]):
                        fh.write(f"{j},{ui},{vi},{float(vals[ui, vi])!r}\n")
    elif isinstance(fit, VfarFit):
        manifest["model"] = "vfar"
        manifest["H"] = fit.H
        manifest["gammas"] = [float(g) for g in fit.gammas]
        manifest["supports"] = [[list(pair) for pair in s] for s in fit.supports]
        manifest["stats"] = fit.stats
        manifest["row_errors"] = {str(k): v for k, v in fit.row_errors.items()}
        manifest["grid"] = _grid_to_dict(fit.grid)
        manifest["bases"] = _save_bases(fit.bases, "bases", outdir)
        off = fit.offsets
        with open(os.path.join(outdir, "omega_blocks.csv"), "w", newline="") as fh:
            fh.write("j,j_prime,h_prime,row,col,value\n")
            for j in range(fit.p):
                if fit.coef_rows[j] is None:
                    continue
                for hp in range(1, fit.H + 1):
                    for jp in range(fit.p):
                        blk = fit.omega_block(j, jp, hp)
                        if not np.any(blk):
                            continue
                        for r in range(blk.shape[0]):
                            for c in range(blk.shape[1]):
                                fh.write(f"{j},{jp},{hp},{r},{c},{float(blk[r, c])!r}\n")
        if export_kernels:
            with open(os.path.join(outdir, "a_kernels.csv"), "w", newline="") as fh:
                fh.write("j,j_prime,h_prime,u_index,v_index,value\n")
                for j in range(fit.p):
                    if fit.coef_rows[j] is None:
                        continue
                    for hp in range(1, fit.H + 1):
                        for jp in range(fit.p):
                            vals = fit.a_kernel(j, jp, hp).values
                            if not np.any(vals):
                                continue
                            for ui in range(vals.shape[0]):
                                for vi in range(vals.shape[1]):
                                    fh.write(
                                        f"{j},{jp},{hp},{ui},{vi},{float(vals[ui, vi])!r}\n"
                                    )
    else:
        raise StructureError(f"unknown fit type {type(fit).__name__}")
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_fit(outdir):
    """Reconstruct a fit saved by `save_fit`; round-trips prediction."""
    with open(os.path.join(outdir, "manifest.json"), "r") as fh:
        manifest = json.load(fh)
    grid = _grid_from_dict(manifest["grid"])
    bases = _load_bases(manifest["bases"], grid, outdir)
    model = manifest["model"]
    if model == "sflr":
        offsets = np.concatenate([[0], np.cumsum([b.d for b in bases])]).astype(np.int64)
        coef = _load_coef_csv(os.path.join(outdir, "coef.csv"), offsets, 1)[:, 0]
        return SflrFit(
            method=manifest["method"],
            bases=bases,
            coef=coef,
            gamma=manifest["gamma"],
            support=tuple(manifest["support"]),
            stats=manifest["stats"],
            L=manifest["L"],
            threshold=manifest["threshold"],
            train_y_mean=manifest["train_y_mean"],
        )
    if model == "fflr":
        grid_v = _grid_from_dict(manifest["grid_v"])
        response_basis = _load_bases(manifest["response_basis"], grid_v, outdir)[0]
        offsets = np.concatenate([[0], np.cumsum([b.d for b in bases])]).astype(np.int64)
        coef = _load_coef_csv(
            os.path.join(outdir, "coef.csv"), offsets, response_basis.d
        )
        return FflrFit(
            method=manifest["method"],
            bases=bases,
            response_basis=response_basis,
            coef=coef,
            gamma=manifest["gamma"],
            support=tuple(manifest["support"]),
            stats=manifest["stats"],
            L=manifest["L"],
            threshold=manifest["threshold"],
        )
    if model == "vfar":
        p = len(bases)
        H = manifest["H"]
        off = np.concatenate([[0], np.cumsum([b.d for b in bases])]).astype(np.int64)
        D = int(off[-1])
        row_errors = {int(k): v for k, v in manifest["row_errors"].items()}
        coef_rows = [
            None if j in row_errors else np.zeros((H * D, int(off[j + 1] - off[j])))
            for j in range(p)
        ]
        path = os.path.join(outdir, "omega_blocks.csv")
        with open(path, "r") as fh:
            fh.readline()
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                j, jp, hp, r, c, v = line.split(",")
                j, jp, hp, r, c = int(j), int(jp), int(hp), int(r), int(c)
                coef_rows[j][(hp - 1) * D + off[jp] + r, c] = float(v)
        return VfarFit(
            method=manifest["method"],
            bases=bases,
            coef_rows=coef_rows,
            gammas=np.asarray(manifest["gammas"]),
            supports=[
                tuple((int(a), int(b)) for a, b in s) for s in manifest["supports"]
            ],
            stats=manifest["stats"],
            row_errors=row_errors,
            H=H,
            L=manifest["L"],
            threshold=manifest["threshold"],
        )
    raise StructureError(f"unknown model {model!r} in manifest")
