"""Grid-based functions, bivariate kernels, and quadrature inner products.

Curves live as samples on a shared quadrature grid over a compact interval.
Every integral downstream (inner products, Hilbert-Schmidt norms, operator
applications) reduces to weighted sums on that grid, so this module is the
numerical substrate for the whole package.

All types are immutable after construction: arrays are marked read-only and
validation happens once, at build time. Non-finite values are rejected here
rather than propagated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, GridMismatchError, StructureError

_WEIGHT_SUM_RTOL = 1e-12

_BINARY_MAGIC = b"AFTS"
_BINARY_HEADER = struct.Struct("<4sIIIdd")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Trapezoid quadrature weights for strictly increasing points."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 1 or points.size < 2:
        raise StructureError("need at least two 1-D grid points")
    w = np.empty_like(points)
    w[0] = (points[1] - points[0]) / 2.0
    w[-1] = (points[-1] - points[-2]) / 2.0
    w[1:-1] = (points[2:] - points[:-2]) / 2.0
    return w


@dataclass(frozen=True)
class Grid:
    """Quadrature grid on a compact interval [a, b].

    points : strictly increasing locations, length G
    weights : positive quadrature weights summing to b - a
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _readonly(self.points)
        w = _readonly(self.weights)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        if pts.ndim != 1 or pts.size < 2:
            raise StructureError("grid needs at least two 1-D points")
        if w.shape != pts.shape:
            raise StructureError("weights and points must have equal length")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise DataError("grid points and weights must be finite")
        if not np.all(np.diff(pts) > 0):
            raise DataError("grid points must be strictly increasing")
        if not np.all(w > 0):
            raise DataError("quadrature weights must be strictly positive")
        span = pts[-1] - pts[0]
        if abs(float(w.sum()) - span) > _WEIGHT_SUM_RTOL * max(1.0, abs(span)):
            raise DataError("quadrature weights must sum to the interval length")

    @classmethod
    def uniform(cls, a: float = 0.0, b: float = 1.0, size: int = 101) -> "Grid":
        """Uniform grid with trapezoid weights (h/2, h, ..., h, h/2)."""
        pts = np.linspace(a, b, size)
        return cls(pts, trapezoid_weights(pts))

    @classmethod
    def trapezoid(cls, points) -> "Grid":
        """Grid over the given (possibly non-uniform) points with trapezoid weights."""
        pts = np.asarray(points, dtype=np.float64)
        return cls(pts, trapezoid_weights(pts))

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def a(self) -> float:
        return float(self.points[0])

    @property
    def b(self) -> float:
        return float(self.points[-1])

    def matches(self, other: "Grid") -> bool:
        return self is other or (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def __eq__(self, other):
        return isinstance(other, Grid) and self.matches(other)


def _require_same_grid(g1: Grid, g2: Grid, what: str) -> None:
    if not g1.matches(g2):
        raise GridMismatchError(f"{what}: grids differ")


@dataclass(frozen=True)
class Curve:
    """A function sampled on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _readonly(self.values)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size != self.grid.size:
            raise StructureError("curve values must match the grid length")
        if not np.all(np.isfinite(v)):
            raise DataError("curve values must be finite")


@dataclass(frozen=True)
class Kernel:
    """A bivariate function sampled on grid_u x grid_v."""

    grid_u: Grid
    grid_v: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _readonly(self.values)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape != (self.grid_u.size, self.grid_v.size):
            raise StructureError("kernel values must be G_u x G_v")
        if not np.all(np.isfinite(v)):
            raise DataError("kernel values must be finite")


@dataclass(frozen=True)
class FunctionalPanel:
    """n x p panel of curves on a shared grid; data indexed (t, j, k)."""

    grid: Grid
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = _readonly(self.data)
        object.__setattr__(self, "data", d)
        if d.ndim != 3:
            raise StructureError("panel data must be (n, p, G)")
        if d.shape[2] != self.grid.size:
            raise StructureError("panel last axis must match the grid length")
        if not np.all(np.isfinite(d)):
            raise DataError("panel values must be finite")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    @property
    def size(self) -> int:
        return self.data.shape[2]

    def curve(self, t: int, j: int) -> Curve:
        return Curve(self.grid, self.data[t, j])


def inner_product(f: Curve, g: Curve) -> float:
    """Quadrature approximation of the L2 inner product of two curves."""
    _require_same_grid(f.grid, g.grid, "inner_product")
    return float(np.dot(f.grid.weights, f.values * g.values))


def kernel_apply(kernel: Kernel, f: Curve) -> Curve:
    """Apply the integral operator with the given kernel to a curve.

    Returns u -> sum_k w_k K(u, v_k) f(v_k), a curve on kernel.grid_u.
    """
    _require_same_grid(kernel.grid_v, f.grid, "kernel_apply")
    out = kernel.values @ (kernel.grid_v.weights * f.values)
    return Curve(kernel.grid_u, out)


def hs_norm(kernel: Kernel) -> float:
    """Hilbert-Schmidt norm of a kernel under the product quadrature."""
    sq = kernel.values * kernel.values
    return float(np.sqrt(kernel.grid_u.weights @ sq @ kernel.grid_v.weights))


def curve_norm(f: Curve) -> float:
    return float(np.sqrt(max(inner_product(f, f), 0.0)))


# ---------------------------------------------------------------------------
# Panel I/O
#
# Two interchange formats, both bit-exact on round trip:
#   * CSV with header row  t,j,u_index,value  (0-based indices, repr floats)
#   * binary dump: header magic "AFTS", u32 n, u32 p, u32 G, f64 a, f64 b,
#     then the (n, p, G) float64 values in column-major order.
# The CSV carries values only; the grid is supplied at load time (default:
# uniform [0, 1]). The binary header stores the uniform-grid endpoints.
# ---------------------------------------------------------------------------


def save_panel_csv(panel: FunctionalPanel, path) -> None:
    n, p, G = panel.data.shape
    with open(path, "w", newline="") as fh:
        fh.write("t,j,u_index,value\n")
        for t in range(n):
            for j in range(p):
                row = panel.data[t, j]
                fh.writelines(
                    f"{t},{j},{k},{float(row[k])!r}\n" for k in range(G)
                )


def load_panel_csv(path, grid: Grid | None = None) -> FunctionalPanel:
    ts, js, ks, vals = [], [], [], []
    with open(path, "r", newline="") as fh:
        header = fh.readline().strip()
        if header != "t,j,u_index,value":
            raise DataError(f"unexpected panel CSV header: {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            t, j, k, v = line.split(",")
            ts.append(int(t))
            js.append(int(j))
            ks.append(int(k))
            vals.append(float(v))
    if not ts:
        raise DataError("panel CSV contains no rows")
    n, p, G = max(ts) + 1, max(js) + 1, max(ks) + 1
    if len(ts) != n * p * G:
        raise DataError("panel CSV is missing entries")
    data = np.empty((n, p, G))
    data[ts, js, ks] = vals
    if grid is None:
        grid = Grid.uniform(0.0, 1.0, G)
    return FunctionalPanel(grid, data)


def save_panel_binary(panel: FunctionalPanel, path) -> None:
    n, p, G = panel.data.shape
    header = _BINARY_HEADER.pack(_BINARY_MAGIC, n, p, G, panel.grid.a, panel.grid.b)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(panel.data).tobytes(order="F"))


def load_panel_binary(path) -> FunctionalPanel:
    with open(path, "rb") as fh:
        raw = fh.read(_BINARY_HEADER.size)
        if len(raw) != _BINARY_HEADER.size:
            raise DataError("binary panel file truncated in header")
        magic, n, p, G, a, b = _BINARY_HEADER.unpack(raw)
        if magic != _BINARY_MAGIC:
            raise DataError(f"bad magic in binary panel file: {magic!r}")
        body = fh.read(8 * n * p * G)
    if len(body) != 8 * n * p * G:
        raise DataError("binary panel file truncated in body")
    data = np.frombuffer(body, dtype="<f8").reshape((n, p, G), order="F")
    return FunctionalPanel(Grid.uniform(a, b, G), data.copy())
