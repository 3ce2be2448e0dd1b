"""Covariance-based comparator: lag-0 FPCA plus group-lasso least squares.

The baseline transforms each model into a multivariate regression on FPCA
scores and solves

    minimize (2n)^{-1} ||Y - X Theta||_F^2 + lambda * sum_j ||Theta_j||_F

with block FISTA (backtracking line search, restart on objective increase).
Under additive white-noise contamination the lag-0 route is inconsistent,
which is exactly what the benchmark against the autocovariance route is
meant to show; without contamination it is a sound estimator.

Fits are returned in the same containers as the moment-route models
(method="cov"), so recovery, prediction, and error metrics are shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._accel import get_fista_kernel, power_iteration_sq_norm, resolve_backend
from .autocov_basis import ScorePanel, project_scores
from .errors import DataError, DomainError, StructureError
from .func_core import FunctionalPanel
from .models import FflrFit, SflrFit, VfarFit, fpca_bases, vfar_design_row


@dataclass(frozen=True)
class GroupLassoProblem:
    """Score-space least squares with a group penalty over series blocks."""

    design: np.ndarray = field(repr=False)
    response: np.ndarray = field(repr=False)
    offsets: np.ndarray
    penalty: float

    def __post_init__(self):
        X = np.ascontiguousarray(self.design, dtype=np.float64)
        Y = np.ascontiguousarray(self.response, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, np.newaxis]
        off = np.ascontiguousarray(self.offsets, dtype=np.int64)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise StructureError("design and response must align in rows")
        if off[0] != 0 or off[-1] != X.shape[1] or np.any(np.diff(off) <= 0):
            raise StructureError("offsets must partition the design columns")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DataError("group-lasso inputs must be finite")
        if self.penalty < 0:
            raise DomainError("penalty must be nonnegative")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", Y)
        object.__setattr__(self, "offsets", off)

    def lambda_max(self) -> float:
        """Smallest penalty at which the zero matrix is optimal (KKT)."""
        n = self.design.shape[0]
        xty = self.design.T @ self.response / n
        sq = np.einsum("ij,ij->i", xty, xty)
        blocks = np.sqrt(np.add.reduceat(sq, self.offsets[:-1]))
        return float(blocks.max(initial=0.0))


@dataclass(frozen=True)
class FistaConfig:
    max_iter: int = 10000
    tol: float = 1e-8
    backend: str | None = None

    def __post_init__(self):
        if self.max_iter < 1 or self.tol <= 0:
            raise DomainError("max_iter and tol must be positive")


def fista_group_lasso(
    problem: GroupLassoProblem,
    cfg: FistaConfig | None = None,
    warm_start: np.ndarray | None = None,
):
    """Solve the group-lasso problem; returns (Theta, info dict).

    info carries iterations, the final objective, the per-iteration
    objective history (monotone nonincreasing), and the backend used.
    ``warm_start`` seeds the iteration, e.g. from a neighboring penalty.
    """
    if cfg is None:
        cfg = FistaConfig()
    X, Y = problem.design, problem.response
    n = X.shape[0]
    xtx = np.ascontiguousarray(X.T @ X)
    xty = np.ascontiguousarray(X.T @ Y)
    ynorm2 = float(np.sum(Y * Y))
    lip = power_iteration_sq_norm(X) / n
    backend = resolve_backend(cfg.backend)
    kernel = get_fista_kernel(backend)
    if warm_start is None:
        x0 = np.zeros((X.shape[1], Y.shape[1]))
    else:
        x0 = np.ascontiguousarray(warm_start, dtype=np.float64)
    theta, iters, obj, history, status = kernel(
        xtx,
        xty,
        ynorm2,
        float(n),
        problem.offsets,
        float(problem.penalty),
        float(lip),
        int(cfg.max_iter),
        float(cfg.tol),
        x0,
    )
    info = {
        "iterations": int(iters),
        "objective": float(obj),
        "objective_history": np.asarray(history),
        "converged": status == 0,
        "backend": backend,
    }
    return theta, info


def _support(theta: np.ndarray, offsets: np.ndarray, rtol: float = 1e-4):
    sq = np.einsum("ij,ij->i", theta, theta)
    norms = np.sqrt(np.add.reduceat(sq, offsets[:-1]))
    cutoff = rtol * float(norms.max(initial=0.0))
    return tuple(int(j) for j in np.nonzero(norms > cutoff)[0]), norms


def _fit_stats(info: dict) -> dict:
    """JSON-safe subset of solver info for fit containers."""
    return {
        "iterations": int(info["iterations"]),
        "objective": float(info["objective"]),
        "converged": bool(info["converged"]),
        "backend": info["backend"],
    }


def fit_cov_sflr(
    panel: FunctionalPanel,
    y,
    *,
    threshold: float = 0.9,
    d_max: int = 10,
    penalty: float | None = None,
    penalty_grid=None,
    fista_cfg: FistaConfig | None = None,
    bases: list | None = None,
    scores: ScorePanel | None = None,
):
    """FPCA + group lasso for the scalar-response model."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if bases is None or scores is None:
        bases, scores = fpca_bases(panel, threshold=threshold, d_max=d_max)
    if (penalty is None) == (penalty_grid is None):
        raise DomainError("pass exactly one of penalty, penalty_grid")
    y_mean = float(y.mean())

    def fit_one(lam, warm=None):
        problem = GroupLassoProblem(
            design=scores.scores, response=y, offsets=scores.offsets, penalty=lam
        )
        theta, info = fista_group_lasso(problem, fista_cfg, warm_start=warm)
        support, _ = _support(theta, scores.offsets)
        return SflrFit(
            method="cov",
            bases=bases,
            coef=theta[:, 0].copy(),
            gamma=float(lam),
            support=support,
            stats=_fit_stats(info),
            L=0,
            threshold=threshold,
            train_y_mean=y_mean,
        )

    if penalty is not None:
        return fit_one(float(penalty))
    fits = []
    warm = None
    for lam in penalty_grid:
        fit = fit_one(float(lam), warm)
        fits.append(fit)
        warm = fit.coef[:, np.newaxis]
    return fits


def fit_cov_fflr(
    panel_x: FunctionalPanel,
    panel_y: FunctionalPanel,
    *,
    threshold: float = 0.9,
    d_max: int = 10,
    penalty: float | None = None,
    penalty_grid=None,
    fista_cfg: FistaConfig | None = None,
    bases: list | None = None,
    scores: ScorePanel | None = None,
    response_basis=None,
):
    """FPCA + group lasso for the functional-response model."""
    if panel_y.p != 1:
        raise StructureError("response panel must hold exactly one series")
    if bases is None or scores is None:
        bases, scores = fpca_bases(panel_x, threshold=threshold, d_max=d_max)
    if response_basis is None:
        from .autocov_basis import build_fpca_basis

        response_basis = build_fpca_basis(panel_y, 0, threshold=threshold, d_max=d_max)
    zeta = project_scores(panel_y, [response_basis]).scores
    if (penalty is None) == (penalty_grid is None):
        raise DomainError("pass exactly one of penalty, penalty_grid")

    def fit_one(lam, warm=None):
        problem = GroupLassoProblem(
            design=scores.scores, response=zeta, offsets=scores.offsets, penalty=lam
        )
        theta, info = fista_group_lasso(problem, fista_cfg, warm_start=warm)
        support, _ = _support(theta, scores.offsets)
        return FflrFit(
            method="cov",
            bases=bases,
            response_basis=response_basis,
            coef=theta.copy(),
            gamma=float(lam),
            support=support,
            stats=_fit_stats(info),
            L=0,
            threshold=threshold,
        )

    if penalty is not None:
        return fit_one(float(penalty))
    fits = []
    warm = None
    for lam in penalty_grid:
        fit = fit_one(float(lam), warm)
        fits.append(fit)
        warm = fit.coef
    return fits


def vfar_lagged_design(scores: np.ndarray, H: int):
    """Stacked lagged designs for VAR least squares: rows t = H..n-1."""
    n = scores.shape[0]
    rows = [vfar_design_row(scores, t, H) for t in range(H, n)]
    return np.asarray(rows)


def fit_cov_vfar(
    panel: FunctionalPanel,
    *,
    H: int = 1,
    threshold: float = 0.9,
    d_max: int = 10,
    penalties=None,
    fista_cfg: FistaConfig | None = None,
    bases: list | None = None,
    scores: ScorePanel | None = None,
) -> VfarFit:
    """FPCA + per-row group lasso for the autoregression.

    ``penalties`` is a scalar or a length-p vector of per-row levels.
    """
    if panel.n <= H:
        raise DomainError("need n > H")
    if bases is None or scores is None:
        bases, scores = fpca_bases(panel, threshold=threshold, d_max=d_max)
    p = len(bases)
    lam = np.asarray(penalties, dtype=np.float64)
    if lam.ndim == 0:
        lam = np.full(p, float(lam))
    if lam.shape != (p,):
        raise StructureError("penalties must be a scalar or length-p vector")
    design = vfar_lagged_design(scores.scores, H)
    design_offsets = np.concatenate(
        [scores.offsets[:-1] + hp * scores.offsets[-1] for hp in range(H)]
        + [[H * scores.offsets[-1]]]
    ).astype(np.int64)

    coef_rows, supports, stats, row_errors = [], [], [], {}
    for j in range(p):
        target = scores.scores[H:, scores.offsets[j] : scores.offsets[j + 1]]
        try:
            problem = GroupLassoProblem(
                design=design,
                response=target,
                offsets=design_offsets,
                penalty=float(lam[j]),
            )
            theta, info = fista_group_lasso(problem, fista_cfg)
        except Exception as err:  # noqa: BLE001 - row failures are reported
            coef_rows.append(None)
            supports.append(())
            stats.append({})
            row_errors[j] = f"{type(err).__name__}: {err}"
            continue
        support_idx, _ = _support(theta, design_offsets)
        pairs = tuple((idx % p, idx // p + 1) for idx in support_idx)
        coef_rows.append(theta.copy())
        supports.append(pairs)
        stats.append(_fit_stats(info))
    return VfarFit(
        method="cov",
        bases=bases,
        coef_rows=coef_rows,
        gammas=lam,
        supports=supports,
        stats=stats,
        row_errors=row_errors,
        H=H,
        L=0,
        threshold=threshold,
    )
