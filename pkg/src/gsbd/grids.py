"""Uniform-grid fields: displacements, phase fields, strains, mollification, slicing.

Displacements and phase fields are sampled at grid nodes; symmetric strains
live on cells, one value per cell from cell-centered differences of the
surrounding nodes.  That staggering makes the symmetric gradient exact on
affine fields, which the rigid-motion and slicing identities rely on.

Component order of symmetric tensors: 1D ``(xx,)``; 2D ``(xx, yy, xy)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptySlice, SupportViolation

_ALIGN_RTOL = 1e-9


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi]`` used for cubes, rectangles and regions."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))
        if self.lo.shape != self.hi.shape:
            raise ValueError("box lo/hi dimension mismatch")

    @classmethod
    def cube(cls, center, half_side: float) -> "Box":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(c - half_side, c + half_side)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def sides(self) -> np.ndarray:
        return self.hi - self.lo

    def measure(self) -> float:
        return float(np.prod(np.maximum(self.sides, 0.0)))

    def is_empty(self, tol: float = 0.0) -> bool:
        return bool(np.any(self.sides < -tol))

    def intersect(self, other: "Box") -> "Box":
        return Box(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))

    def contains_point(self, x, tol: float = 0.0) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def contains_box(self, other: "Box", tol: float = 0.0) -> bool:
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def pad(self, margin: float) -> "Box":
        return Box(self.lo - margin, self.hi + margin)

    def corners(self) -> np.ndarray:
        """All 2^dim corner points, shape ``(2^dim, dim)``."""
        axes = [(self.lo[d], self.hi[d]) for d in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular lattice, ``dim`` in {1, 2}.

    Parameters
    ----------
    origin : array_like
        Coordinates of the first node.
    spacing : float
        Cell side ``h``, identical on every axis.
    counts : tuple of int
        Number of cells per axis (nodes per axis = counts + 1).
    """

    origin: np.ndarray
    spacing: float
    counts: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", np.atleast_1d(np.asarray(self.origin, dtype=float)))
        object.__setattr__(self, "counts", tuple(int(c) for c in np.atleast_1d(self.counts)))
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if self.origin.size != len(self.counts):
            raise ValueError("origin/counts dimension mismatch")
        if self.dim not in (1, 2):
            raise ValueError("only dim 1 and 2 are supported")
        if any(c < 2 for c in self.counts):
            raise ValueError("need at least 2 cells per axis")

    @classmethod
    def unit(cls, dim: int, cells: int) -> "Grid":
        return cls(np.zeros(dim), 1.0 / cells, (cells,) * dim)

    @property
    def dim(self) -> int:
        return self.origin.size

    @property
    def node_shape(self) -> tuple:
        return tuple(c + 1 for c in self.counts)

    @property
    def cell_shape(self) -> tuple:
        return self.counts

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def domain(self) -> Box:
        return Box(self.origin, self.origin + self.spacing * np.asarray(self.counts))

    def domain_measure(self) -> float:
        return self.cell_volume * self.n_cells

    def axis_coords(self, d: int) -> np.ndarray:
        return self.origin[d] + self.spacing * np.arange(self.counts[d] + 1)

    def node_coords(self) -> np.ndarray:
        """Node coordinates, shape ``(*node_shape, dim)``."""
        axes = [self.axis_coords(d) for d in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def cell_centers(self) -> np.ndarray:
        axes = [self.axis_coords(d)[:-1] + 0.5 * self.spacing for d in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def index_of(self, x, *, snap: bool = True) -> tuple:
        """Node multi-index of the point ``x``, which must sit on a node."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        raw = (x - self.origin) / self.spacing
        idx = np.rint(raw).astype(int)
        if snap and np.any(np.abs(raw - idx) > _ALIGN_RTOL * max(1.0, np.max(np.abs(raw)))):
            raise ValueError(f"point {x} is not grid-aligned")
        return tuple(idx)

    def node_slices_for(self, box: Box, tol: float | None = None) -> tuple:
        """Slices selecting the nodes inside the closed ``box`` (clipped to the grid)."""
        if tol is None:
            tol = _ALIGN_RTOL * self.spacing
        sl = []
        for d in range(self.dim):
            lo = int(np.ceil((box.lo[d] - self.origin[d]) / self.spacing - tol))
            hi = int(np.floor((box.hi[d] - self.origin[d]) / self.spacing + tol))
            lo = max(lo, 0)
            hi = min(hi, self.counts[d])
            if hi < lo:
                return None
            sl.append(slice(lo, hi + 1))
        return tuple(sl)

    def cell_mask_for(self, box: Box) -> np.ndarray:
        """Boolean mask over cells whose center lies in the closed ``box``."""
        centers = self.cell_centers()
        mask = np.ones(self.cell_shape, dtype=bool)
        for d in range(self.dim):
            c = centers[..., d]
            mask &= (c >= box.lo[d]) & (c <= box.hi[d])
        return mask

    def subgrid(self, box: Box) -> tuple:
        """Largest node-aligned subgrid covering ``box`` intersected with the grid.

        Returns ``(grid, node_slices)``; ``node_slices`` address this grid's
        node arrays.
        """
        tol = _ALIGN_RTOL * self.spacing
        sl = []
        for d in range(self.dim):
            lo = int(np.floor((box.lo[d] - self.origin[d]) / self.spacing + tol))
            hi = int(np.ceil((box.hi[d] - self.origin[d]) / self.spacing - tol))
            lo = max(lo, 0)
            hi = min(hi, self.counts[d])
            if hi - lo < 1:
                # keep at least one cell so downstream shapes stay valid
                hi = min(lo + 1, self.counts[d])
                lo = hi - 1
            sl.append(slice(lo, hi + 1))
        origin = self.origin + self.spacing * np.array([s.start for s in sl])
        counts = tuple(s.stop - 1 - s.start for s in sl)
        return Grid(origin, self.spacing, counts), tuple(sl)

    def aligned_with(self, other: "Grid") -> bool:
        """True when ``other`` has the same spacing and node-commensurate origin."""
        if abs(other.spacing - self.spacing) > _ALIGN_RTOL * self.spacing:
            return False
        shift = (other.origin - self.origin) / self.spacing
        return bool(np.all(np.abs(shift - np.rint(shift)) < _ALIGN_RTOL * 10))

    def node_offset_to(self, other: "Grid") -> np.ndarray:
        """Integer node offset of ``other``'s origin inside this grid."""
        if not self.aligned_with(other):
            raise ValueError("grids are not node-aligned")
        return np.rint((other.origin - self.origin) / self.spacing).astype(int)


def _check_samples(grid: Grid, samples: np.ndarray, trailing: tuple) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    want = grid.node_shape + trailing
    if samples.shape != want:
        raise ValueError(f"sample shape {samples.shape} does not match {want}")
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples must be finite")
    samples = samples.copy()
    samples.setflags(write=False)
    return samples


@dataclass(frozen=True)
class ScalarField:
    """Node-sampled scalar field (phase variable, slices of components)."""

    grid: Grid
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", _check_samples(self.grid, self.samples, ()))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "ScalarField":
        x = grid.node_coords()
        return cls(grid, np.apply_along_axis(lambda p: fn(p), -1, x))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.node_shape, float(value)))

    def with_samples(self, samples: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, samples)


@dataclass(frozen=True)
class VectorField:
    """Node-sampled displacement field with ``dim`` components."""

    grid: Grid
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "samples", _check_samples(self.grid, self.samples, (self.grid.dim,))
        )

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "VectorField":
        x = grid.node_coords()
        flat = x.reshape(-1, grid.dim)
        vals = np.array([np.atleast_1d(fn(p)) for p in flat], dtype=float)
        return cls(grid, vals.reshape(grid.node_shape + (grid.dim,)))

    @classmethod
    def zero(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros(grid.node_shape + (grid.dim,)))

    def with_samples(self, samples: np.ndarray) -> "VectorField":
        return VectorField(self.grid, samples)

    def restrict(self, subgrid: Grid) -> "VectorField":
        off = self.grid.node_offset_to(subgrid)
        sl = tuple(
            slice(off[d], off[d] + subgrid.counts[d] + 1) for d in range(self.grid.dim)
        )
        if any(s.start < 0 or s.stop > self.grid.node_shape[d] for d, s in enumerate(sl)):
            raise ValueError("subgrid exceeds field extent")
        return VectorField(subgrid, self.samples[sl])

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.samples**2, axis=-1))


@dataclass(frozen=True)
class SymTensorField:
    """Cell-sampled symmetric tensor field (strains)."""

    grid: Grid
    samples: np.ndarray

    def __post_init__(self):
        ncomp = 1 if self.grid.dim == 1 else 3
        samples = np.asarray(self.samples, dtype=float)
        want = self.grid.cell_shape + (ncomp,)
        if samples.shape != want:
            raise ValueError(f"sample shape {samples.shape} does not match {want}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def frobenius_sq(self) -> np.ndarray:
        """Per-cell squared Frobenius norm; the off-diagonal counts twice in 2D."""
        s = self.samples
        if self.grid.dim == 1:
            return s[..., 0] ** 2
        return s[..., 0] ** 2 + s[..., 1] ** 2 + 2.0 * s[..., 2] ** 2

    def contract(self, xi: np.ndarray) -> np.ndarray:
        """Per-cell value of ``e xi . xi``."""
        xi = np.asarray(xi, dtype=float)
        s = self.samples
        if self.grid.dim == 1:
            return s[..., 0] * xi[0] * xi[0]
        return (
            s[..., 0] * xi[0] * xi[0]
            + s[..., 1] * xi[1] * xi[1]
            + 2.0 * s[..., 2] * xi[0] * xi[1]
        )


def sym_gradient(u: VectorField) -> SymTensorField:
    """Cell-centered symmetric gradient, exact on affine displacements.

    Each cell differences its 2^dim corner nodes: the derivative along an
    axis averages the differences over the remaining corners.
    """
    g = u.grid
    h = g.spacing
    s = u.samples
    if g.dim == 1:
        exx = (s[1:, 0] - s[:-1, 0]) / h
        return SymTensorField(g, exx[:, None])
    dx = (s[1:, :-1, :] - s[:-1, :-1, :] + s[1:, 1:, :] - s[:-1, 1:, :]) / (2.0 * h)
    dy = (s[:-1, 1:, :] - s[:-1, :-1, :] + s[1:, 1:, :] - s[1:, :-1, :]) / (2.0 * h)
    exx = dx[..., 0]
    eyy = dy[..., 1]
    exy = 0.5 * (dx[..., 1] + dy[..., 0])
    return SymTensorField(g, np.stack([exx, eyy, exy], axis=-1))


def scalar_gradient(f: ScalarField) -> np.ndarray:
    """Cell-centered gradient of a scalar field, shape ``(*cell_shape, dim)``."""
    g = f.grid
    h = g.spacing
    s = f.samples
    if g.dim == 1:
        return ((s[1:] - s[:-1]) / h)[:, None]
    dx = (s[1:, :-1] - s[:-1, :-1] + s[1:, 1:] - s[:-1, 1:]) / (2.0 * h)
    dy = (s[:-1, 1:] - s[:-1, :-1] + s[1:, 1:] - s[1:, :-1]) / (2.0 * h)
    return np.stack([dx, dy], axis=-1)


def node_to_cell(values: np.ndarray, dim: int) -> np.ndarray:
    """Average node samples onto cells (per trailing component)."""
    if dim == 1:
        return 0.5 * (values[1:] + values[:-1])
    return 0.25 * (
        values[1:, 1:] + values[1:, :-1] + values[:-1, 1:] + values[:-1, :-1]
    )


# ---------------------------------------------------------------------------
# Mollification
# ---------------------------------------------------------------------------


def bump_profile(r: np.ndarray) -> np.ndarray:
    """Default radial profile ``(1 - r^2)^3`` on ``r < 1``, 0 outside."""
    r = np.asarray(r, dtype=float)
    return np.where(r < 1.0, np.maximum(0.0, 1.0 - r**2) ** 3, 0.0)


@dataclass(frozen=True)
class Mollifier:
    """Discrete radial convolution stencil with support radius ``1/k``.

    The stencil weights are the radial profile sampled at the node offsets
    inside the support ball and normalized to sum to one.  Symmetry of the
    offset set makes all first moments vanish, so affine fields are fixed
    points of the convolution.
    """

    scale: float
    spacing: float
    offsets: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @classmethod
    def for_grid(
        cls, grid: Grid, k: float, profile: Callable = bump_profile
    ) -> "Mollifier":
        h = grid.spacing
        radius = 1.0 / k
        reach = int(np.floor(radius / h + 1e-12))
        ranges = [np.arange(-reach, reach + 1)] * grid.dim
        mesh = np.meshgrid(*ranges, indexing="ij")
        offsets = np.stack([m.ravel() for m in mesh], axis=-1)
        r = np.sqrt(np.sum((offsets * h) ** 2, axis=-1)) * k
        weights = profile(r)
        keep = weights > 0.0
        offsets, weights = offsets[keep], weights[keep]
        weights = weights / weights.sum()
        return cls(float(k), h, offsets, weights)

    @property
    def support_radius(self) -> float:
        return 1.0 / self.scale

    @property
    def reach(self) -> int:
        """Largest node offset used along any axis."""
        return int(np.max(np.abs(self.offsets))) if self.offsets.size else 0

    def weight_sum(self) -> float:
        return float(np.sum(self.weights))

    def first_moment(self) -> np.ndarray:
        return (self.weights[:, None] * self.offsets * self.spacing).sum(axis=0)


def mollify(f, m: Mollifier, out_grid: Grid | None = None):
    """Convolve a node field with the stencil, evaluated on ``out_grid``.

    ``out_grid`` defaults to the field's own grid.  The stencil must stay
    inside the field's sampled extent everywhere on ``out_grid``; callers
    provide fields on a fattened grid when they need values near the
    evaluation boundary.

    Raises
    ------
    SupportViolation
        If any stencil point would read an undefined sample.
    """
    grid = f.grid
    if abs(m.spacing - grid.spacing) > _ALIGN_RTOL * grid.spacing:
        raise SupportViolation("mollifier stencil spacing does not match the grid")
    if out_grid is None:
        out_grid = grid
    off = grid.node_offset_to(out_grid)
    out_shape = out_grid.node_shape
    reach = m.reach
    for d in range(grid.dim):
        if off[d] - reach < 0 or off[d] + out_shape[d] - 1 + reach > grid.counts[d]:
            raise SupportViolation(
                "stencil support exceeds the field extent on axis %d" % d
            )
    s = f.samples
    acc = np.zeros(out_shape + s.shape[grid.dim :])
    for o, w in zip(m.offsets, m.weights):
        sl = tuple(
            slice(off[d] + o[d], off[d] + o[d] + out_shape[d]) for d in range(grid.dim)
        )
        acc += w * s[sl]
    if isinstance(f, VectorField):
        return VectorField(out_grid, acc)
    return ScalarField(out_grid, acc)


# ---------------------------------------------------------------------------
# Interpolation and slicing
# ---------------------------------------------------------------------------


def interpolate(f: VectorField, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a node field at arbitrary points.

    Points must lie inside the grid domain (a spacing-relative tolerance is
    allowed and clamped).  Returns shape ``(npts, dim)``.
    """
    g = f.grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rel = (pts - g.origin) / g.spacing
    eps = 1e-9
    for d in range(g.dim):
        if np.any(rel[:, d] < -eps) or np.any(rel[:, d] > g.counts[d] + eps):
            raise EmptySlice("interpolation point outside the grid domain")
    rel = np.clip(rel, 0.0, np.asarray(g.counts, dtype=float))
    base = np.minimum(np.floor(rel).astype(int), np.asarray(g.counts) - 1)
    frac = rel - base
    s = f.samples
    if g.dim == 1:
        i = base[:, 0]
        t = frac[:, 0:1]
        return (1 - t) * s[i] + t * s[i + 1]
    i, j = base[:, 0], base[:, 1]
    tx = frac[:, 0:1]
    ty = frac[:, 1:2]
    return (
        (1 - tx) * (1 - ty) * s[i, j]
        + tx * (1 - ty) * s[i + 1, j]
        + (1 - tx) * ty * s[i, j + 1]
        + tx * ty * s[i + 1, j + 1]
    )


@dataclass(frozen=True)
class SliceSamples:
    """Samples of a directional slice and its finite-difference derivative."""

    t: np.ndarray
    values: np.ndarray
    deriv_t: np.ndarray
    deriv: np.ndarray


def slice_field(
    u: VectorField, xi, y, num_samples: int = 65
) -> SliceSamples:
    """Sample ``t -> u(y + t xi) . xi`` along a line through the grid.

    The line is clipped to the grid domain and sampled at ``num_samples``
    evenly spaced parameters; off-node values use multilinear interpolation.
    The derivative is the central difference at the interior samples; for
    affine ``u`` it reproduces the doubly contracted symmetric gradient
    exactly.

    Raises
    ------
    EmptySlice
        If the line misses the domain (or only grazes it).
    """
    g = u.grid
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    norm = float(np.linalg.norm(xi))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError("xi must be a unit vector")
    xi = xi / norm
    y = np.atleast_1d(np.asarray(y, dtype=float))
    dom = g.domain()
    t_lo, t_hi = -np.inf, np.inf
    for d in range(g.dim):
        if abs(xi[d]) < 1e-14:
            if not (dom.lo[d] - 1e-12 <= y[d] <= dom.hi[d] + 1e-12):
                raise EmptySlice("line misses the domain")
        else:
            a = (dom.lo[d] - y[d]) / xi[d]
            b = (dom.hi[d] - y[d]) / xi[d]
            t_lo = max(t_lo, min(a, b))
            t_hi = min(t_hi, max(a, b))
    if not np.isfinite(t_lo) or not np.isfinite(t_hi) or t_hi - t_lo < 1e-12:
        raise EmptySlice("line misses the domain")
    if num_samples < 3:
        raise ValueError("need at least 3 samples")
    t = np.linspace(t_lo, t_hi, num_samples)
    pts = y[None, :] + t[:, None] * xi[None, :]
    vals = interpolate(u, pts) @ xi
    delta = t[1] - t[0]
    deriv = (vals[2:] - vals[:-2]) / (2.0 * delta)
    return SliceSamples(t, vals, t[1:-1], deriv)


# ---------------------------------------------------------------------------
# Construction helpers
# ---------------------------------------------------------------------------


def affine_field(grid: Grid, b, A) -> VectorField:
    """The affine displacement ``x -> b + A x`` sampled on the nodes."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    x = grid.node_coords()
    vals = b + np.einsum("ij,...j->...i", A, x)
    return VectorField(grid, vals)


def pad_field(u: VectorField, margin_nodes: int, mode: str = "reflect") -> VectorField:
    """Extend a field onto a grid fattened by ``margin_nodes`` on every side.

    ``mode`` is ``"reflect"`` (mirror across each face, no repeated edge;
    applied in passes when the margin exceeds the field), ``"edge"``
    (constant continuation) or ``"zero"``.  Used to supply halos when no
    analytic extension exists.
    """
    g = u.grid
    m = int(margin_nodes)
    if m <= 0:
        return u
    if mode == "reflect":
        padded = u.samples
        left = m
        while left > 0:
            step = min(left, min(s - 1 for s in padded.shape[: g.dim]))
            padded = np.pad(padded, [(step, step)] * g.dim + [(0, 0)], mode="reflect")
            left -= step
    elif mode == "edge":
        padded = np.pad(u.samples, [(m, m)] * g.dim + [(0, 0)], mode="edge")
    elif mode == "zero":
        padded = np.pad(u.samples, [(m, m)] * g.dim + [(0, 0)], mode="constant")
    else:
        raise ValueError(f"unknown padding mode {mode!r}")
    big = Grid(
        g.origin - m * g.spacing,
        g.spacing,
        tuple(c + 2 * m for c in g.counts),
    )
    return VectorField(big, padded)
