"""Step 1: autocovariance-based dimension reduction.

Sample (auto)covariance estimation, the lag-pooled nonnegative operator per
series, its eigen-decomposition into a data-driven orthonormal basis, score
projection, and classical lag-0 FPCA (used for functional responses and by
the covariance-based baseline).

The point of the lagged route: at any nonzero lag the autocovariance of the
observed curves is free of the additive white-noise contamination, so bases
built from lags 1..L estimate the signal geometry even when the lag-0
covariance cannot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError, GridMismatchError, StructureError
from .func_core import Curve, FunctionalPanel, Grid, Kernel

_EIG_ASYM_TOL = 1e-8
_EIG_NEG_RTOL = 1e-8


@dataclass(frozen=True)
class LagCovEstimate:
    """Sample lag-h cross-covariance kernels for the requested series pairs."""

    h: int
    blocks: dict = field(repr=False)

    def block(self, j: int, k: int) -> Kernel:
        return self.blocks[(j, k)]


def sample_autocov(panel: FunctionalPanel, h: int, pairs=None) -> LagCovEstimate:
    """Sample lag-h autocovariance blocks of a panel.

    Block (j, k) is (n-h)^{-1} sum_{t=1}^{n-h} W_tj(u) W_{(t+h)k}(v); the
    panel is taken as mean zero. ``pairs`` limits which (j, k) blocks are
    materialized; None means all p*p pairs.
    """
    n, p, _ = panel.data.shape
    if h < 0 or h >= n:
        raise DomainError(f"lag h={h} must satisfy 0 <= h < n={n}")
    if pairs is None:
        pairs = [(j, k) for j in range(p) for k in range(p)]
    lead = panel.data[: n - h]
    lag = panel.data[h:]
    blocks = {}
    for j, k in pairs:
        vals = lead[:, j, :].T @ lag[:, k, :] / (n - h)
        blocks[(j, k)] = Kernel(panel.grid, panel.grid, vals)
    return LagCovEstimate(h=h, blocks=blocks)


def pooled_autocov_kernel(panel: FunctionalPanel, j: int, L: int) -> Kernel:
    """Lag-pooled nonnegative operator for one series.

    Sums, over lags h = 1..L, the composition of the lag-h sample
    autocovariance with its own transpose. All lags share the common time
    range t = 1..n-L with normalizer (n-L), which makes the result exactly
    equal to its dual Gram-matrix formulation and symmetric PSD by
    construction.
    """
    n = panel.n
    if L < 1 or L >= n:
        raise DomainError(f"lag budget L={L} must satisfy 1 <= L < n={n}")
    x = panel.data[:, j, :]
    m = n - L
    sqw = np.sqrt(panel.grid.weights)
    G = panel.grid.size
    acc = np.zeros((G, G))
    base = x[:m]
    for h in range(1, L + 1):
        s_h = base.T @ x[h : h + m] / m
        b_h = s_h * sqw[np.newaxis, :]
        acc += b_h @ b_h.T
    acc = (acc + acc.T) / 2.0
    return Kernel(panel.grid, panel.grid, acc)


def _weighted_eigh(values: np.ndarray, grid: Grid, max_components: int):
    """Eigenpairs of a symmetric kernel under the quadrature inner product.

    Solves the weighted problem through D^{1/2} K D^{1/2} with D the diagonal
    of quadrature weights, maps eigenvectors back by D^{-1/2}, fixes signs so
    each function's largest-magnitude coordinate is positive, and clamps
    roundoff-negative eigenvalues at zero. Returns (eigenvalues, functions)
    with functions stacked as rows of an (m, G) array, orthonormal under the
    grid's inner product.
    """
    vmax = float(np.abs(values).max(initial=0.0))
    asym = float(np.abs(values - values.T).max(initial=0.0))
    if asym > _EIG_ASYM_TOL * max(1.0, vmax):
        raise DataError(f"kernel asymmetry {asym:.3e} beyond tolerance")
    sqw = np.sqrt(grid.weights)
    sym = values * sqw[:, np.newaxis] * sqw[np.newaxis, :]
    sym = (sym + sym.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    lam_max = float(eigvals[0]) if eigvals.size else 0.0
    neg_floor = -_EIG_NEG_RTOL * max(1.0, lam_max)
    if eigvals.size and float(eigvals[-1]) < neg_floor:
        raise DataError(
            f"kernel eigenvalue {eigvals[-1]:.3e} is negative beyond tolerance"
        )
    eigvals = np.maximum(eigvals, 0.0)
    m = min(max_components, eigvals.size)
    funcs = (eigvecs[:, order[:m]] / sqw[:, np.newaxis]).T
    for i in range(m):
        peak = np.argmax(np.abs(funcs[i]))
        if funcs[i, peak] < 0:
            funcs[i] = -funcs[i]
    return eigvals[:m].copy(), np.ascontiguousarray(funcs)


def eigen_decompose(kernel: Kernel, max_components: int):
    """Leading eigenpairs of a symmetric kernel; see `_weighted_eigh`.

    Returns (eigenvalues, [Curve, ...]) with eigenvalues sorted descending.
    """
    if not kernel.grid_u.matches(kernel.grid_v):
        raise GridMismatchError("eigen_decompose needs grid_u == grid_v")
    vals, funcs = _weighted_eigh(kernel.values, kernel.grid_u, max_components)
    return vals, [Curve(kernel.grid_u, row) for row in funcs]


def select_dim(eigenvalues, threshold: float) -> int:
    """Smallest d whose cumulative eigenvalue share reaches the threshold.

    Uses the inclusive convention: d is the first index with
    cumsum(d) / total >= threshold.
    """
    if not 0.0 < threshold < 1.0:
        raise DomainError("threshold must lie strictly between 0 and 1")
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.ndim != 1 or lam.size == 0:
        raise StructureError("eigenvalues must be a nonempty 1-D array")
    lam_max = float(lam.max(initial=0.0))
    if float(lam.min()) < -1e-12 * max(1.0, lam_max):
        raise DataError("eigenvalues must be nonnegative")
    lam = np.maximum(lam, 0.0)
    total = float(lam.sum())
    if total <= 0.0:
        raise DataError("cannot select a truncation from an all-zero spectrum")
    ratios = np.cumsum(lam) / total
    return int(np.searchsorted(ratios, threshold - 1e-15) + 1)


@dataclass(frozen=True)
class AutocovBasis:
    """Estimated orthonormal basis for one series, with its spectrum.

    ``lags`` is the lag budget used to pool autocovariances; 0 marks the
    covariance route (plain lag-0 FPCA).
    """

    series: int
    eigenvalues: np.ndarray
    functions: np.ndarray = field(repr=False)  # (d, G), rows orthonormal
    grid: Grid
    lags: int

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=np.float64)
        fn = np.ascontiguousarray(self.functions, dtype=np.float64)
        ev.setflags(write=False)
        fn.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)
        object.__setattr__(self, "functions", fn)
        if fn.ndim != 2 or fn.shape[1] != self.grid.size:
            raise StructureError("basis functions must be (d, G) on the grid")

    @property
    def d(self) -> int:
        return self.functions.shape[0]

    def eigenfunctions(self) -> list[Curve]:
        return [Curve(self.grid, row) for row in self.functions]


def _build_basis(kernel_values, grid, series, lags, threshold, d_max, d_cap):
    full_vals, funcs = _weighted_eigh(kernel_values, grid, grid.size)
    d = select_dim(full_vals, threshold)
    d = min(d, d_max, d_cap, grid.size)
    return AutocovBasis(
        series=series,
        eigenvalues=full_vals,
        functions=funcs[:d],
        grid=grid,
        lags=lags,
    )


def build_autocov_basis(
    panel: FunctionalPanel,
    j: int,
    L: int = 3,
    threshold: float = 0.9,
    d_max: int = 10,
) -> AutocovBasis:
    """Step-1 basis for series j: pooled operator, eigenanalysis, truncation.

    The truncation is the cumulative-share rule capped at
    min(d_max, n - L, G).
    """
    kern = pooled_autocov_kernel(panel, j, L)
    return _build_basis(kern.values, panel.grid, j, L, threshold, d_max, panel.n - L)


def fpca(panel: FunctionalPanel, j: int, max_components: int):
    """Eigenpairs of the lag-0 sample covariance of series j."""
    if panel.n < 2:
        raise DomainError("fpca needs at least two observations")
    cov = sample_autocov(panel, 0, pairs=[(j, j)]).block(j, j)
    return eigen_decompose(cov, max_components)


def build_fpca_basis(
    panel: FunctionalPanel,
    j: int,
    threshold: float = 0.9,
    d_max: int = 10,
) -> AutocovBasis:
    """Covariance-route basis (lag-0 FPCA) with the same truncation rule."""
    if panel.n < 2:
        raise DomainError("fpca needs at least two observations")
    cov = sample_autocov(panel, 0, pairs=[(j, j)]).block(j, j)
    return _build_basis(cov.values, panel.grid, j, 0, threshold, d_max, panel.n)


@dataclass(frozen=True)
class ScorePanel:
    """Estimated basis coefficients, blocked by series.

    scores[t, offsets[j] + l] is the coefficient of series j on its l-th
    basis function at time t.
    """

    scores: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.scores, dtype=np.float64)
        off = np.ascontiguousarray(self.offsets, dtype=np.int64)
        if s.ndim != 2:
            raise StructureError("scores must be 2-D")
        if not np.all(np.isfinite(s)):
            raise DataError("scores must be finite")
        if off.ndim != 1 or off.size < 2 or off[0] != 0 or off[-1] != s.shape[1]:
            raise StructureError("offsets must run from 0 to the column count")
        if np.any(np.diff(off) <= 0):
            raise StructureError("offsets must be strictly increasing")
        s.setflags(write=False)
        off.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "offsets", off)

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def p(self) -> int:
        return self.offsets.size - 1

    def d(self, j: int) -> int:
        return int(self.offsets[j + 1] - self.offsets[j])

    def block(self, j: int) -> np.ndarray:
        return self.scores[:, self.offsets[j] : self.offsets[j + 1]]


def project_scores(panel: FunctionalPanel, bases: list[AutocovBasis]) -> ScorePanel:
    """Project every observed curve onto its series' estimated basis."""
    if len(bases) != panel.p:
        raise StructureError("need one basis per series")
    dims = [b.d for b in bases]
    offsets = np.concatenate([[0], np.cumsum(dims)]).astype(np.int64)
    scores = np.empty((panel.n, int(offsets[-1])))
    for j, basis in enumerate(bases):
        if not basis.grid.matches(panel.grid):
            raise GridMismatchError(f"basis for series {j} is on a different grid")
        proj = (basis.functions * panel.grid.weights[np.newaxis, :]).T
        scores[:, offsets[j] : offsets[j + 1]] = panel.data[:, j, :] @ proj
    return ScorePanel(scores=scores, offsets=offsets)


def autocov_hs_distance(
    panel_a: FunctionalPanel,
    panel_b: FunctionalPanel,
    h: int,
    diagonal_only: bool = False,
) -> float:
    """Blocked Hilbert-Schmidt distance between two panels' lag-h estimates.

    Computes || Sigma_h(A) - Sigma_h(B) ||_F over the p*p kernel blocks
    (or only the per-series diagonal blocks, the ones the dimension
    reduction step consumes) without materializing them, through n x n Gram
    matrices of weighted cross inner products. Equivalent to assembling
    every block with `sample_autocov` and summing squared `hs_norm` values.
    """
    if not panel_a.grid.matches(panel_b.grid):
        raise GridMismatchError("panels must share a grid")
    if panel_a.data.shape != panel_b.data.shape:
        raise StructureError("panels must have equal shape")
    n = panel_a.n
    if h < 0 or h >= n:
        raise DomainError(f"lag h={h} must satisfy 0 <= h < n={n}")
    w = panel_a.grid.weights
    m = n - h
    scale = 1.0 / (m * m)

    def distance_sq(p_aa, p_bb, p_ab):
        def pair_term(front, back):
            return scale * float(np.sum(front[:m, :m] * back[h:, h:]))

        return pair_term(p_aa, p_aa) - 2.0 * pair_term(p_ab, p_ab) + pair_term(
            p_bb, p_bb
        )

    if diagonal_only:
        total = 0.0
        for j in range(panel_a.p):
            aw = panel_a.data[:, j, :] * w[np.newaxis, :]
            bw = panel_b.data[:, j, :] * w[np.newaxis, :]
            ra = panel_a.data[:, j, :]
            rb = panel_b.data[:, j, :]
            total += distance_sq(aw @ ra.T, bw @ rb.T, aw @ rb.T)
        return float(np.sqrt(max(total, 0.0)))
    flat_a = (panel_a.data * w[np.newaxis, np.newaxis, :]).reshape(n, -1)
    raw_a = panel_a.data.reshape(n, -1)
    raw_b = panel_b.data.reshape(n, -1)
    flat_b = (panel_b.data * w[np.newaxis, np.newaxis, :]).reshape(n, -1)
    total = distance_sq(flat_a @ raw_a.T, flat_b @ raw_b.T, flat_a @ raw_b.T)
    return float(np.sqrt(max(total, 0.0)))


# ---------------------------------------------------------------------------
# Exports: eigenvalue table, eigenfunction columns, score long format
# ---------------------------------------------------------------------------


def save_bases_csv(bases: list[AutocovBasis], eigenvalues_path, functions_path) -> None:
    """Write `j,l,lambda` rows and a wide per-eigenfunction value table."""
    with open(eigenvalues_path, "w", newline="") as fh:
        fh.write("j,l,lambda\n")
        for basis in bases:
            for l, lam in enumerate(basis.eigenvalues):
                fh.write(f"{basis.series},{l},{float(lam)!r}\n")
    grid = bases[0].grid
    cols = [(b.series, l) for b in bases for l in range(b.d)]
    with open(functions_path, "w", newline="") as fh:
        fh.write("u," + ",".join(f"j{j}_l{l}" for j, l in cols) + "\n")
        stacked = np.vstack([b.functions for b in bases])
        for g in range(grid.size):
            row = ",".join(repr(float(v)) for v in stacked[:, g])
            fh.write(f"{float(grid.points[g])!r},{row}\n")


def save_scores_csv(scores: ScorePanel, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t,j,l,score\n")
        for t in range(scores.n):
            for j in range(scores.p):
                block = scores.block(j)
                for l in range(scores.d(j)):
                    fh.write(f"{t},{j},{l},{float(block[t, l])!r}\n")


def load_scores_csv(path) -> ScorePanel:
    ts, js, ls, vals = [], [], [], []
    with open(path, "r", newline="") as fh:
        header = fh.readline().strip()
        if header != "t,j,l,score":
            raise DataError(f"unexpected scores CSV header: {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            t, j, l, v = line.split(",")
            ts.append(int(t))
            js.append(int(j))
            ls.append(int(l))
            vals.append(float(v))
    if not ts:
        raise DataError("scores CSV contains no rows")
    n = max(ts) + 1
    p = max(js) + 1
    dims = np.zeros(p, dtype=np.int64)
    for j, l in zip(js, ls):
        dims[j] = max(dims[j], l + 1)
    offsets = np.concatenate([[0], np.cumsum(dims)]).astype(np.int64)
    scores = np.zeros((n, int(offsets[-1])))
    for t, j, l, v in zip(ts, js, ls, vals):
        scores[t, offsets[j] + l] = v
    return ScorePanel(scores=scores, offsets=offsets)
