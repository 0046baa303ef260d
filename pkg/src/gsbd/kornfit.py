"""Rigid-affine fitting with an exceptional set, and the affine overlap gap.

The fit target is the class of affine maps ``a(x) = b + A x`` with ``A``
skew, the nullspace of the symmetric gradient.  Existence results only
assert that some such map works up to an exceptional set; here the map is
the least-squares minimizer over the cube's nodes and the exceptional set is
a greedy worst-cells selection, and the inequality shapes are *measured*
rather than assumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCube, EmptyIntersection, ZeroStrain
from .grids import Box, Grid, VectorField, node_to_cell, sym_gradient


@dataclass(frozen=True)
class RigidAffineMap:
    """Affine map ``x -> b + A x`` with skew ``A`` (zero symmetric gradient).

    In 2D the skew matrix is ``[[0, -spin], [spin, 0]]``; in 1D it is zero
    and the map is the constant ``b``.
    """

    b: np.ndarray
    spin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))

    @property
    def dim(self) -> int:
        return self.b.size

    def matrix(self) -> np.ndarray:
        if self.dim == 1:
            return np.zeros((1, 1))
        return np.array([[0.0, -self.spin], [self.spin, 0.0]])

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.dim == 1:
            return self.b[0] + np.zeros_like(pts)
        return self.b + np.stack(
            [-self.spin * pts[..., 1], self.spin * pts[..., 0]], axis=-1
        )

    def compose(self, other: "RigidAffineMap") -> "RigidAffineMap":
        """Pointwise sum of two rigid-affine maps (still rigid-affine)."""
        return RigidAffineMap(self.b + other.b, self.spin + other.spin)

    def as_field(self, grid: Grid) -> VectorField:
        x = grid.node_coords()
        if self.dim == 1:
            return VectorField(grid, np.broadcast_to(self.b, x.shape).copy())
        return VectorField(grid, self(x))


@dataclass(frozen=True)
class FitResult:
    """A rigid-affine fit together with its exceptional set.

    ``omega`` is a boolean cell mask on the field's grid; ``residual_lp`` is
    the L^p norm of ``u - a`` over the fit window minus omega.
    """

    map: RigidAffineMap
    omega: np.ndarray
    residual_lp: float
    budget_used: float


class RigidFitter:
    """Least-squares rigid-affine fits over node boxes, O(1) per box.

    Precomputes summed-area tables of the moments entering the normal
    equations so that repeated fits over many cubes stay cheap.
    """

    def __init__(self, u: VectorField):
        self.u = u
        self.grid = u.grid
        x = self.grid.node_coords()
        s = u.samples
        if self.grid.dim == 1:
            fields = [np.ones(self.grid.node_shape), s[..., 0]]
        else:
            fields = [
                np.ones(self.grid.node_shape),
                x[..., 0],
                x[..., 1],
                x[..., 0] ** 2 + x[..., 1] ** 2,
                s[..., 0],
                s[..., 1],
                x[..., 0] * s[..., 1] - x[..., 1] * s[..., 0],
            ]
        self._tables = [self._summed(f) for f in fields]

    @staticmethod
    def _summed(f: np.ndarray) -> np.ndarray:
        t = f
        for ax in range(f.ndim):
            t = np.cumsum(t, axis=ax)
        return np.pad(t, [(1, 0)] * f.ndim)

    def _box_sum(self, table: np.ndarray, sl: tuple) -> float:
        if len(sl) == 1:
            return float(table[sl[0].stop] - table[sl[0].start])
        (a, b) = sl
        return float(
            table[a.stop, b.stop]
            - table[a.start, b.stop]
            - table[a.stop, b.start]
            + table[a.start, b.start]
        )

    def fit_slices(self, sl: tuple) -> RigidAffineMap:
        """Fit over the nodes addressed by ``sl`` (one slice per axis)."""
        n_nodes = int(np.prod([s.stop - s.start for s in sl]))
        dim = self.grid.dim
        if n_nodes < dim * (dim + 1) // 2 + dim:
            raise DegenerateCube("not enough nodes in the cube for a rigid-affine fit")
        sums = [self._box_sum(t, sl) for t in self._tables]
        if dim == 1:
            return RigidAffineMap(np.array([sums[1] / sums[0]]))
        n, sx, sy, sxx_yy, su1, su2, smom = sums
        m = np.array(
            [
                [n, 0.0, -sy],
                [0.0, n, sx],
                [-sy, sx, sxx_yy],
            ]
        )
        rhs = np.array([su1, su2, smom])
        try:
            sol = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError as exc:
            raise DegenerateCube("rank-deficient rigid-affine fit system") from exc
        if not np.all(np.isfinite(sol)):
            raise DegenerateCube("rigid-affine fit system is singular")
        return RigidAffineMap(sol[:2], float(sol[2]))

    def fit_box(self, box: Box) -> RigidAffineMap:
        sl = self.grid.node_slices_for(box)
        if sl is None:
            raise DegenerateCube("cube contains no grid nodes")
        return self.fit_slices(sl)


def fit_rigid_affine(u: VectorField, cube: Box) -> RigidAffineMap:
    """Least-squares rigid-affine fit of ``u`` over the nodes in ``cube``.

    Deterministic normal-equations solve; the minimizer is unique whenever
    the cube's nodes are not collinear.

    Raises
    ------
    DegenerateCube
        If the cube holds too few nodes or the system is rank deficient.
    """
    return RigidFitter(u).fit_box(cube)


def pointwise_gap(u: VectorField, a: RigidAffineMap) -> np.ndarray:
    """Nodal Euclidean norm of ``u - a``."""
    diff = u.samples - a(u.grid.node_coords())
    return np.sqrt(np.sum(diff**2, axis=-1))


def exceptional_set(
    u: VectorField, a: RigidAffineMap, window: Box, budget: float
) -> np.ndarray:
    """Greedy worst-cells selection inside ``window`` up to a volume budget.

    Cells are ranked by the cell-averaged nodal gap ``|u - a|`` and taken
    largest-first while the next cell still fits in the budget; ties break
    lexicographically by cell index.  Returns a boolean cell mask on the
    field's grid (budget 0 gives an empty mask).
    """
    g = u.grid
    mask = np.zeros(g.cell_shape, dtype=bool)
    if budget <= 0.0:
        return mask
    in_window = g.cell_mask_for(window)
    if not in_window.any():
        return mask
    score = node_to_cell(pointwise_gap(u, a), g.dim)
    flat_ids = np.flatnonzero(in_window.ravel())
    flat_scores = score.ravel()[flat_ids]
    order = np.lexsort((flat_ids, -flat_scores))
    cellvol = g.cell_volume
    n_take = min(int(np.floor(budget / cellvol + 1e-12)), len(flat_ids))
    chosen = flat_ids[order[:n_take]]
    mask.ravel()[chosen] = True
    mask = mask.reshape(g.cell_shape)
    return mask


def _lp_integral(u: VectorField, a: RigidAffineMap, cells: np.ndarray, p: float) -> float:
    gap_p = node_to_cell(pointwise_gap(u, a) ** p, u.grid.dim)
    return float(np.sum(gap_p[cells])) * u.grid.cell_volume


def fit_with_exceptional_set(
    u: VectorField, cube: Box, window: Box, budget: float, p: float = 2.0
) -> FitResult:
    """Fit on ``cube`` and carve the exceptional set out of ``window``."""
    a = fit_rigid_affine(u, cube)
    omega = exceptional_set(u, a, window, budget)
    keep = u.grid.cell_mask_for(window) & ~omega
    residual = _lp_integral(u, a, keep, p) ** (1.0 / p)
    return FitResult(a, omega, residual, float(omega.sum()) * u.grid.cell_volume)


@dataclass(frozen=True)
class KornReport:
    """Measured constants of the Korn-Poincare inequality shapes."""

    c_hat: float
    c_hat_sobolev: float | None
    strain_integral: float
    exact: bool


def korn_poincare_check(
    u: VectorField, fit: FitResult, cube: Box, window: Box, p: float = 2.0
) -> KornReport:
    """Measured constants ``residual^p / (r^p int_Q |e(u)|^p)`` and the Sobolev variant.

    ``r`` is the half-side of ``cube``.  When both the strain integral and
    the residual vanish the fit is exact and the report says so; a zero
    strain integral with a nonzero residual flags a fit bug.

    Raises
    ------
    ZeroStrain
    """
    g = u.grid
    r = float(np.max(cube.sides)) / 2.0
    e = sym_gradient(u)
    in_cube = g.cell_mask_for(cube)
    strain_p = np.sum(e.frobenius_sq() ** (p / 2.0), where=in_cube) * g.cell_volume
    strain_p = float(strain_p)
    scale = max(1.0, float(np.abs(u.samples).max()))
    if strain_p <= (1e-12 * scale) ** p * cube.measure():
        if fit.residual_lp > 1e-10 * scale:
            raise ZeroStrain(
                "zero strain on the cube but nonzero fit residual "
                f"({fit.residual_lp:.3e}); the fit should be exact"
            )
        return KornReport(0.0, 0.0 if g.dim == 2 else None, strain_p, True)
    c_hat = fit.residual_lp**p / (r**p * strain_p)
    c_sob = None
    if g.dim == 2:
        sob = 2.0  # Sobolev exponent of 1 in two dimensions
        keep = g.cell_mask_for(window) & ~fit.omega
        lhs = _lp_integral_power(u, fit.map, keep, p * sob)
        c_sob = lhs / (r ** ((p - 1) * sob) * strain_p**sob)
    return KornReport(float(c_hat), c_sob, strain_p, False)


def _lp_integral_power(u, a, cells, power) -> float:
    gap_pow = node_to_cell(pointwise_gap(u, a) ** power, u.grid.dim)
    return float(np.sum(gap_pow[cells])) * u.grid.cell_volume


@dataclass(frozen=True)
class OverlapGap:
    """Sup-norm gap of two rigid-affine maps over a box intersection."""

    gap: float
    r_factor: float
    measured_c: float | None


def affine_overlap_gap(
    a0: RigidAffineMap,
    ai: RigidAffineMap,
    box0: Box,
    box_i: Box,
    u: VectorField | None = None,
    p: float = 2.0,
) -> OverlapGap:
    """Exact sup of ``|a0 - ai|`` over ``box0 ∩ box_i``.

    The difference of two rigid-affine maps is affine, and the Euclidean
    norm of an affine map is convex, so the sup over a box is attained at a
    corner.  ``r_factor`` is ``r**-(n-p)`` with ``r`` the half-side of
    ``box0``; when ``u`` is supplied the measured constant
    ``gap^p / (r_factor * int_{Q0 u Qi} |e(u)|^p)`` is attached.

    Raises
    ------
    EmptyIntersection
    """
    inter = box0.intersect(box_i)
    if inter.is_empty(tol=1e-12):
        raise EmptyIntersection("boxes do not overlap")
    corners = inter.corners()
    gap = float(np.max(np.linalg.norm(a0(corners) - ai(corners), axis=-1)))
    n = box0.dim
    r = float(np.max(box0.sides)) / 2.0
    r_factor = r ** (-(n - p))
    measured = None
    if u is not None:
        g = u.grid
        e = sym_gradient(u)
        cells = g.cell_mask_for(box0) | g.cell_mask_for(box_i)
        denom = float(np.sum(e.frobenius_sq() ** (p / 2.0), where=cells)) * g.cell_volume
        if denom > 1e-300:
            measured = gap**p / (r_factor * denom)
    return OverlapGap(gap, r_factor, measured)
