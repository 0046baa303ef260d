"""Discrete jump sets, the dyadic node lattice, and good/bad node classification.

Facets are codimension-1 pieces of the jump set: points in 1D, axis-aligned
segments on grid lines in 2D (so one-sided traces of node fields are well
defined).  The node lattice at scale ``k`` carries four nested cubes per node
(sidelengths 2/k, 4/k, 8/k, 16/k); a node is *good* when the jump measure in
its 8/k-cube stays below ``theta * k**-(n-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import ScaleMismatch
from .grids import Box, Grid, SymTensorField, VectorField, sym_gradient

_TOL = 1e-9


@dataclass(frozen=True)
class FacetSet:
    """Jump-set geometry: 1D point facets or 2D axis-aligned segment facets.

    Parameters
    ----------
    dim : int
    p0, p1 : ndarray
        Segment endpoints, shape ``(m, dim)``.  In 1D ``p1`` equals ``p0``
        (facets are points and carry counting measure).
    normals : ndarray
        Unit facet normals, shape ``(m, dim)``.
    amplitudes : ndarray
        Optional jump amplitude per facet (NaN when absent).
    grid : Grid or None
        When present, 2D facets are validated to lie on grid lines.
    """

    dim: int
    p0: np.ndarray
    p1: np.ndarray
    normals: np.ndarray
    amplitudes: np.ndarray
    grid: Grid | None = None

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=float).reshape(-1, self.dim)
        p1 = np.asarray(self.p1, dtype=float).reshape(-1, self.dim)
        nrm = np.asarray(self.normals, dtype=float).reshape(-1, self.dim)
        amp = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        if not (len(p0) == len(p1) == len(nrm) == len(amp)):
            raise ValueError("facet array length mismatch")
        if self.dim == 2 and len(p0):
            d = p1 - p0
            varying = np.abs(d) > _TOL
            if np.any(varying.sum(axis=1) != 1):
                raise ValueError("2D facets must be axis-aligned segments")
            if np.any(np.linalg.norm(d, axis=1) <= _TOL):
                raise ValueError("facets must have positive length")
            lens = np.abs(np.linalg.norm(nrm, axis=1) - 1.0)
            if np.any(lens > 1e-9):
                raise ValueError("facet normals must be unit vectors")
            if np.any(np.abs(np.sum(d * nrm, axis=1)) > 1e-9 * np.linalg.norm(d, axis=1)):
                raise ValueError("facet normals must be orthogonal to the segment")
            if self.grid is not None:
                axis = np.argmax(varying, axis=1)
                const_axis = 1 - axis
                c = p0[np.arange(len(p0)), const_axis]
                rel = (c - self.grid.origin[const_axis]) / self.grid.spacing
                if np.any(np.abs(rel - np.rint(rel)) > 1e-6):
                    raise ValueError("facets must lie on grid lines of the fine grid")
        for name, arr in (("p0", p0), ("p1", p1), ("normals", nrm), ("amplitudes", amp)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # -- constructors -------------------------------------------------

    @classmethod
    def empty(cls, dim: int, grid: Grid | None = None) -> "FacetSet":
        z = np.zeros((0, dim))
        return cls(dim, z, z, z, np.zeros(0), grid)

    @classmethod
    def from_segments(cls, segments, amplitudes=None, grid: Grid | None = None) -> "FacetSet":
        """2D facets from ``[(x0, y0, x1, y1), ...]``; normals point left of p0->p1."""
        segs = np.asarray(segments, dtype=float).reshape(-1, 4)
        p0 = segs[:, :2]
        p1 = segs[:, 2:]
        d = p1 - p0
        lens = np.linalg.norm(d, axis=1, keepdims=True)
        if np.any(lens <= _TOL):
            raise ValueError("facets must have positive length")
        t = d / lens
        normals = np.stack([-t[:, 1], t[:, 0]], axis=-1)
        if amplitudes is None:
            amplitudes = np.full(len(p0), np.nan)
        return cls(2, p0, p1, normals, np.asarray(amplitudes, dtype=float), grid)

    @classmethod
    def from_points(cls, points, amplitudes=None, grid: Grid | None = None) -> "FacetSet":
        """1D facets from crack locations."""
        pts = np.asarray(points, dtype=float).reshape(-1, 1)
        if amplitudes is None:
            amplitudes = np.full(len(pts), np.nan)
        normals = np.ones_like(pts)
        return cls(1, pts, pts.copy(), normals, np.asarray(amplitudes, dtype=float), grid)

    # -- basic queries ------------------------------------------------

    def __len__(self) -> int:
        return len(self.p0)

    @cached_property
    def lengths(self) -> np.ndarray:
        if self.dim == 1:
            return np.ones(len(self))
        return np.linalg.norm(self.p1 - self.p0, axis=1)

    def total_measure(self) -> float:
        return float(np.sum(self.lengths))

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.p0 + self.p1)

    def with_grid(self, grid: Grid) -> "FacetSet":
        return FacetSet(self.dim, self.p0, self.p1, self.normals, self.amplitudes, grid)

    def subtract_box(self, box: Box) -> "FacetSet":
        """Facets with the parts inside the closed ``box`` removed."""
        if self.dim == 1:
            keep = ~(
                (self.p0[:, 0] >= box.lo[0] - _TOL) & (self.p0[:, 0] <= box.hi[0] + _TOL)
            )
            return FacetSet(1, self.p0[keep], self.p1[keep], self.normals[keep],
                            self.amplitudes[keep], self.grid)
        out_p0, out_p1, out_n, out_a = [], [], [], []
        for i in range(len(self)):
            a, b = self.p0[i], self.p1[i]
            axis = int(np.argmax(np.abs(b - a)))
            c_axis = 1 - axis
            c = a[c_axis]
            lo, hi = sorted((a[axis], b[axis]))
            if not (box.lo[c_axis] - _TOL <= c <= box.hi[c_axis] + _TOL):
                pieces = [(lo, hi)]
            else:
                cut_lo = max(lo, box.lo[axis])
                cut_hi = min(hi, box.hi[axis])
                if cut_hi <= cut_lo:
                    pieces = [(lo, hi)]
                else:
                    pieces = []
                    if cut_lo - lo > _TOL:
                        pieces.append((lo, cut_lo))
                    if hi - cut_hi > _TOL:
                        pieces.append((cut_hi, hi))
            for q0, q1 in pieces:
                pa = np.array([c, c], dtype=float)
                pb = pa.copy()
                pa[axis], pb[axis] = q0, q1
                pa[c_axis] = pb[c_axis] = c
                out_p0.append(pa)
                out_p1.append(pb)
                out_n.append(self.normals[i])
                out_a.append(self.amplitudes[i])
        if not out_p0:
            return FacetSet.empty(2, self.grid)
        return FacetSet(2, np.array(out_p0), np.array(out_p1), np.array(out_n),
                        np.array(out_a), self.grid)


# ---------------------------------------------------------------------------
# Clipped facet measure
# ---------------------------------------------------------------------------


def _segment_box_clip(p0, p1, box: Box, open_box: bool) -> float:
    """Length of an axis-aligned segment clipped to a box (open or closed)."""
    d = p1 - p0
    axis = int(np.argmax(np.abs(d)))
    c_axis = 1 - axis
    c = p0[c_axis]
    if open_box:
        if not (box.lo[c_axis] + _TOL < c < box.hi[c_axis] - _TOL):
            return 0.0
    else:
        if not (box.lo[c_axis] - _TOL <= c <= box.hi[c_axis] + _TOL):
            return 0.0
    lo, hi = sorted((p0[axis], p1[axis]))
    return max(0.0, min(hi, box.hi[axis]) - max(lo, box.lo[axis]))


def _segment_polygon_clip(p0, p1, vertices: np.ndarray) -> float:
    """Length of a segment clipped to a convex polygon (CCW vertices)."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    n = len(vertices)
    for i in range(n):
        a = vertices[i]
        b = vertices[(i + 1) % n]
        edge = b - a
        inward = np.array([-edge[1], edge[0]])
        denom = float(np.dot(inward, d))
        num = float(np.dot(inward, a - p0))
        if abs(denom) < 1e-15:
            if num > 0:
                return 0.0
        elif denom > 0:
            t0 = max(t0, num / denom)
        else:
            t1 = min(t1, num / denom)
        if t0 >= t1:
            return 0.0
    return (t1 - t0) * float(np.linalg.norm(d))


def facet_measure(facets: FacetSet, region, *, open_region: bool = False) -> float:
    """H^{n-1} measure of the facet set clipped to a region.

    ``region`` is a :class:`Box` or, in 2D, an ``(m, 2)`` array of convex
    polygon vertices in counterclockwise order.  ``open_region`` drops facets
    lying exactly on the region boundary (used by the node classification,
    whose cubes are open).  Additive over disjoint regions.
    """
    if len(facets) == 0:
        return 0.0
    if facets.dim == 1:
        x = facets.p0[:, 0]
        lo, hi = float(region.lo[0]), float(region.hi[0])
        if open_region:
            return float(np.sum((x > lo + _TOL) & (x < hi - _TOL)))
        return float(np.sum((x >= lo - _TOL) & (x <= hi + _TOL)))
    if isinstance(region, Box):
        return float(
            sum(
                _segment_box_clip(facets.p0[i], facets.p1[i], region, open_region)
                for i in range(len(facets))
            )
        )
    vertices = np.asarray(region, dtype=float)
    return float(
        sum(
            _segment_polygon_clip(facets.p0[i], facets.p1[i], vertices)
            for i in range(len(facets))
        )
    )


# ---------------------------------------------------------------------------
# Node lattice and classification
# ---------------------------------------------------------------------------


def lattice_step_cells(grid: Grid, k: float) -> int:
    """Cells per 1/k; raises ScaleMismatch unless the lattice aligns with the grid.

    Requires 1/k to be an integer multiple of the spacing and the grid origin
    to sit on the fine lattice, so every cube face of every scale lands on a
    cell boundary and clipped measures are exact.
    """
    if k < 4:
        raise ScaleMismatch("k must be at least 4")
    m2 = 1.0 / (k * grid.spacing)
    if abs(m2 - round(m2)) > 1e-9 or round(m2) < 1:
        raise ScaleMismatch(
            f"1/k = {1.0 / k} is not an integer multiple of the spacing {grid.spacing}"
        )
    rel = grid.origin / grid.spacing
    if np.any(np.abs(rel - np.rint(rel)) > 1e-6):
        raise ScaleMismatch("grid origin must lie on the fine lattice")
    return int(round(m2))


@dataclass(frozen=True)
class CubeLattice:
    """Node lattice at scale ``k`` restricted to a fattened domain.

    Nodes are the points ``z = j * (2/k)`` with integer ``j`` such that ``z``
    lies in ``domain + [-1/k, 1/k]^n``.  Each node carries nested cubes of
    half-sides 1/k, 2/k, 4/k and 8/k.
    """

    grid: Grid
    k: float
    domain: Box
    indices: np.ndarray = field(repr=False)  # (N, dim) integer lattice coords

    @classmethod
    def build(cls, grid: Grid, k: float, domain: Box | None = None) -> "CubeLattice":
        lattice_step_cells(grid, k)
        if domain is None:
            domain = grid.domain()
        step = 2.0 / k
        ranges = []
        for d in range(grid.dim):
            lo = int(np.ceil((domain.lo[d] - 1.0 / k) / step - _TOL))
            hi = int(np.floor((domain.hi[d] + 1.0 / k) / step + _TOL))
            ranges.append(np.arange(lo, hi + 1))
        mesh = np.meshgrid(*ranges, indexing="ij")
        idx = np.stack([m.ravel() for m in mesh], axis=-1)
        return cls(grid, float(k), domain, idx)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def step(self) -> float:
        return 2.0 / self.k

    def coords(self) -> np.ndarray:
        return self.indices * self.step

    def cube(self, i: int, half_side_factor: int) -> Box:
        """Cube of half-side ``half_side_factor / k`` around node ``i``."""
        z = self.indices[i] * self.step
        return Box.cube(z, half_side_factor / self.k)


_CUBE_HALF = {"q": 1, "q_tilde": 2, "Q": 4, "Q_tilde": 8}


@dataclass(frozen=True)
class NodeClassification:
    """Good/bad partition of the lattice nodes of one scale.

    ``good``/``bad`` are boolean masks over ``lattice.indices``.  The
    refinement ``g1`` marks good nodes whose 8/k-cube jump measure also stays
    below ``k**-(n-1/2)``; ``g1_tilde`` marks good nodes all of whose in-set
    lattice neighbors lie in ``g1``, ``g2_tilde`` those with a neighbor in
    ``g2``.
    """

    lattice: CubeLattice
    theta: float
    measures: np.ndarray = field(repr=False)
    good: np.ndarray = field(repr=False)
    g1: np.ndarray = field(repr=False)

    @property
    def grid(self) -> Grid:
        return self.lattice.grid

    @property
    def k(self) -> float:
        return self.lattice.k

    @property
    def bad(self) -> np.ndarray:
        return ~self.good

    @property
    def g2(self) -> np.ndarray:
        return self.good & ~self.g1

    @cached_property
    def _neighbor_lists(self):
        index_of = {tuple(j): i for i, j in enumerate(self.lattice.indices)}
        dim = self.grid.dim
        offsets = []
        for off in np.ndindex(*(3,) * dim):
            o = np.array(off) - 1
            if np.any(o != 0):
                offsets.append(o)
        neigh = []
        for j in self.lattice.indices:
            ids = []
            for o in offsets:
                t = tuple(j + o)
                if t in index_of:
                    ids.append(index_of[t])
            neigh.append(np.array(ids, dtype=int))
        return neigh

    @cached_property
    def g1_tilde(self) -> np.ndarray:
        out = np.zeros(len(self.lattice), dtype=bool)
        for i, ids in enumerate(self._neighbor_lists):
            out[i] = self.good[i] and bool(np.all(self.g1[ids])) if len(ids) else self.good[i]
        return out

    @cached_property
    def g2_tilde(self) -> np.ndarray:
        out = np.zeros(len(self.lattice), dtype=bool)
        for i, ids in enumerate(self._neighbor_lists):
            out[i] = self.good[i] and bool(np.any(self.g2[ids]))
        return out

    # -- derived regions ----------------------------------------------

    def _cube_cell_window(self, which: np.ndarray, half_factor: int):
        """Cell mask (on a fattened index window) of the cube union over ``which``."""
        g = self.grid
        m2 = lattice_step_cells(g, self.k)
        margin = 9 * m2  # widest cube reach (8/k) plus one lattice step
        shape = tuple(c + 2 * margin for c in g.counts)
        mask = np.zeros(shape, dtype=bool)
        half_cells = half_factor * m2
        step_h = self.lattice.step / g.spacing
        for j in self.lattice.indices[which]:
            n_idx = np.rint(j * step_h - g.origin / g.spacing).astype(int)
            sl = tuple(
                slice(margin + n_idx[d] - half_cells, margin + n_idx[d] + half_cells)
                for d in range(g.dim)
            )
            mask[sl] = True
        return mask, margin

    def good_region_cells(self) -> np.ndarray:
        """Cells of the grid covered by the closed 2/k-cubes of good nodes."""
        mask, margin = self._cube_cell_window(self.good, 1)
        sl = tuple(slice(margin, margin + c) for c in self.grid.counts)
        return mask[sl]

    def bad_region_cells(self) -> np.ndarray:
        """Cells of the grid covered by the closed 8/k-cubes of bad nodes."""
        mask, margin = self._cube_cell_window(self.bad, 4)
        sl = tuple(slice(margin, margin + c) for c in self.grid.counts)
        return mask[sl]

    def bad_region_volume(self, clip: str = "full") -> float:
        """Volume of the bad region: ``"full"`` counts cubes beyond the grid."""
        if clip == "full":
            mask, _ = self._cube_cell_window(self.bad, 4)
            return float(mask.sum()) * self.grid.cell_volume
        if clip == "grid":
            return float(self.bad_region_cells().sum()) * self.grid.cell_volume
        raise ValueError(f"unknown clip mode {clip!r}")


def classify_nodes(
    facets: FacetSet,
    k: float,
    theta: float,
    *,
    grid: Grid | None = None,
    domain: Box | None = None,
) -> NodeClassification:
    """Partition lattice nodes by the jump measure in their open 8/k-cubes.

    A node is good when ``H^{n-1}(J cap Q_z) <= theta * k**-(n-1)``; ties
    classify as good.  ``g1`` uses the sharper threshold ``k**-(n-1/2)``.

    Raises
    ------
    ScaleMismatch
        If 1/k is not an integer multiple of the grid spacing.
    """
    if grid is None:
        grid = facets.grid
    if grid is None:
        raise ValueError("classify_nodes needs a grid (facets.grid or grid=...)")
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    lattice = CubeLattice.build(grid, k, domain)
    n = grid.dim
    thr_good = theta * k ** (-(n - 1))
    thr_g1 = k ** (-(n - 0.5))
    measures = np.empty(len(lattice))
    for i in range(len(lattice)):
        measures[i] = facet_measure(facets, lattice.cube(i, 4), open_region=True)
    good = measures <= thr_good + 1e-15
    g1 = good & (measures <= thr_g1 + 1e-15)
    return NodeClassification(lattice, float(theta), measures, good, g1)


def bad_region_inflation_check(classification: NodeClassification) -> bool:
    """Check that the 1/k-fattened complement of the good region sits in the bad region.

    The good region is recomputed from the stored jump measures (so a
    tampered classification that relabels a bad node as good shrinks the
    claimed bad region but not the genuine complement, and the check fails);
    the bad region uses the classification's labels.  Works on exact cell
    masks over a window large enough to contain every bad cube; the
    fattening uses the true Euclidean gap between closed cells against the
    open ball radius 1/k.
    """
    c = classification
    g = c.grid
    m2 = lattice_step_cells(g, c.k)
    thr = c.theta * c.k ** (-(g.dim - 1))
    genuine_good = c.measures <= thr + 1e-15
    good_mask, margin = c._cube_cell_window(genuine_good, 1)
    bad_mask, margin_b = c._cube_cell_window(c.bad, 4)
    assert margin == margin_b
    # cells meeting the closed domain of the classification
    window_shape = good_mask.shape
    in_domain = np.zeros(window_shape, dtype=bool)
    dom_cells = g.cell_mask_for(c.lattice.domain)
    sl = tuple(slice(margin, margin + n) for n in g.counts)
    in_domain[sl] = dom_cells
    m1 = in_domain & ~good_mask
    if not m1.any():
        return True
    reach = m2 + 1
    offs = np.arange(-reach, reach + 1)
    if g.dim == 1:
        gap = np.maximum(0, np.abs(offs) - 1) * g.spacing
        structure = gap < 1.0 / c.k - 1e-12
        structure = structure[:, None].squeeze(-1)
    else:
        ox, oy = np.meshgrid(offs, offs, indexing="ij")
        gap = g.spacing * np.hypot(
            np.maximum(0, np.abs(ox) - 1), np.maximum(0, np.abs(oy) - 1)
        )
        structure = gap < 1.0 / c.k - 1e-12
    fattened = ndimage.binary_dilation(m1, structure=structure)
    return bool(np.all(bad_mask[fattened]))


# ---------------------------------------------------------------------------
# Crack-aware strain
# ---------------------------------------------------------------------------


def piecewise_strain(u: VectorField, facets: FacetSet) -> SymTensorField:
    """Cell strains that never difference across a declared facet.

    Nodes lying on a facet carry the trace from the side its normal points
    into; cells on the opposite side replace those node values by one-sided
    linear extrapolation from their own two layers before differencing.
    Exact for fields affine in the facet-normal direction on each side.
    Cells whose edge meets a facet only partially are corrected whole.
    """
    e = sym_gradient(u).samples.copy()
    g = u.grid
    h = g.spacing
    s = u.samples
    if len(facets) == 0:
        return SymTensorField(g, e)
    if g.dim == 1:
        for i in range(len(facets)):
            ell = int(np.rint((facets.p0[i, 0] - g.origin[0]) / h))
            # nodes carry the +x side; the cell left of the point extrapolates
            if 1 <= ell <= g.counts[0]:
                cell = ell - 1
                if cell - 1 >= 0:
                    e[cell, 0] = (s[ell - 1, 0] - s[ell - 2, 0]) / h
                else:
                    e[cell, 0] = 0.0
        return SymTensorField(g, e)
    for i in range(len(facets)):
        p0, p1 = facets.p0[i], facets.p1[i]
        ta = int(np.argmax(np.abs(p1 - p0)))
        na = 1 - ta
        nu_sign = float(np.sign(facets.normals[i][na]))
        rel = (p0[na] - g.origin[na]) / h
        ell = int(np.rint(rel))
        if abs(rel - ell) > 1e-6:
            continue  # off-lattice facet (e.g. a reflected image): no node carries it
        if not (1 <= ell <= g.counts[na]):
            continue
        lo, hi = sorted((p0[ta], p1[ta]))
        j0 = int(np.floor((lo - g.origin[ta]) / h + 1e-9))
        j1 = int(np.ceil((hi - g.origin[ta]) / h - 1e-9))
        j0 = max(j0, 0)
        j1 = min(j1, g.counts[ta])
        if j1 <= j0:
            continue
        cols = slice(j0, j1 + 1)  # node range along the facet
        # the cells on the side the normal points away from get extrapolated
        # facet-line values from their own two layers
        if nu_sign >= 0:
            cell_row = ell - 1
            src1, src2 = ell - 1, ell - 2
        else:
            cell_row = ell
            src1, src2 = ell + 1, ell + 2
        if cell_row < 0 or cell_row >= g.counts[na]:
            continue
        if 0 <= src2 <= g.counts[na]:
            if na == 1:
                ext = 2.0 * s[cols, src1, :] - s[cols, src2, :]
                own = s[cols, src1, :]
            else:
                ext = 2.0 * s[src1, cols, :] - s[src2, cols, :]
                own = s[src1, cols, :]
        else:
            if na == 1:
                ext = s[cols, src1, :].copy()
                own = s[cols, src1, :]
            else:
                ext = s[src1, cols, :].copy()
                own = s[src1, cols, :]
        # rebuild the affected cells' strains with (own-layer, extrapolated-line)
        if na == 1:
            bottom, top = (own, ext) if nu_sign >= 0 else (ext, own)
            dx = (bottom[1:] - bottom[:-1] + top[1:] - top[:-1]) / (2.0 * h)
            dy = (top[1:] - bottom[1:] + top[:-1] - bottom[:-1]) / (2.0 * h)
            cells = slice(j0, j1)
            e[cells, cell_row, 0] = dx[..., 0]
            e[cells, cell_row, 1] = dy[..., 1]
            e[cells, cell_row, 2] = 0.5 * (dx[..., 1] + dy[..., 0])
        else:
            left, right = (own, ext) if nu_sign >= 0 else (ext, own)
            dy = (left[1:] - left[:-1] + right[1:] - right[:-1]) / (2.0 * h)
            dx = (right[1:] - left[1:] + right[:-1] - left[:-1]) / (2.0 * h)
            cells = slice(j0, j1)
            e[cell_row, cells, 0] = dx[..., 0]
            e[cell_row, cells, 1] = dy[..., 1]
            e[cell_row, cells, 2] = 0.5 * (dx[..., 1] + dy[..., 0])
    return SymTensorField(g, e)


# ---------------------------------------------------------------------------
# Jump-field synthesis
# ---------------------------------------------------------------------------


def synthesize_jump_field(
    facets: FacetSet, grid: Grid, taper: float = 0.1
) -> VectorField:
    """Displacement jumping by each facet's amplitude across it.

    Every facet contributes ``amp * nu * (sign/2) * ramp`` where ``sign``
    flips across the facet line and ``ramp`` tapers the amplitude to zero
    over ``taper * length`` at the segment ends (a partial crack cannot bound
    a piecewise-constant field, so the amplitude must die off at the tips).
    Nodes exactly on a facet carry the positive-side trace.
    """
    x = grid.node_coords()
    out = np.zeros(grid.node_shape + (grid.dim,))
    for i in range(len(facets)):
        amp = facets.amplitudes[i]
        if not np.isfinite(amp):
            amp = 1.0
        nu = facets.normals[i]
        if grid.dim == 1:
            s = np.where(x[..., 0] >= facets.p0[i, 0], 0.5, -0.5)
            out[..., 0] += amp * s
            continue
        d = facets.p1[i] - facets.p0[i]
        length = float(np.linalg.norm(d))
        tdir = d / length
        rel = x - facets.p0[i]
        side = np.einsum("...j,j->...", rel, nu)
        tcoord = np.einsum("...j,j->...", rel, tdir)
        w = max(taper * length, 1e-12)
        ramp = np.clip(np.minimum(tcoord, length - tcoord) / w, 0.0, 1.0)
        s = np.where(side >= 0.0, 0.5, -0.5)
        out += (amp * s * ramp)[..., None] * nu
    return VectorField(grid, out)
