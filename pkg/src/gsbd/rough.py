"""Piecewise rough approximation: fits on good cubes, zeroing on bad cubes.

The construction replaces the displacement by rigid-affine fits on small
exceptional sets around every good node, mollifies at scale 1/k, and cuts
the result off on the union of the bad 8/k-cubes.  The approximant's jump
then lives on bad-cube boundaries only, with measure at most a multiple of
``theta**-1`` times the input jump, and the energy and L^p defects vanish
as k grows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cracks import (
    FacetSet,
    NodeClassification,
    classify_nodes,
    facet_measure,
    piecewise_strain,
)
from .energies import PsiTerm
from .errors import HaloTooSmall, MissingFit
from .grids import (
    Box,
    Grid,
    Mollifier,
    VectorField,
    mollify,
    node_to_cell,
    sym_gradient,
)
from .kornfit import RigidAffineMap, RigidFitter, exceptional_set


@dataclass(frozen=True)
class NodeFit:
    """Fit registry entry for one good node (registry order = node order)."""

    node: int
    map: RigidAffineMap
    omega: np.ndarray = field(repr=False)  # cell mask on the data grid


def fit_good_nodes(
    u: VectorField,
    classification: NodeClassification,
    omega_coeff: float = 4.0,
) -> list:
    """Rigid-affine fit plus exceptional set for every good node, in node order.

    Fits use the nodes of the 8/k-cube (clipped to the data grid); the
    exceptional budget is ``omega_coeff * measure(J cap Q_z) / k`` inside the
    4/k-cube, mirroring the volume scaling of the underlying inequality with
    an exposed constant.
    """
    fitter = RigidFitter(u)
    k = classification.k
    fits = []
    for i in np.flatnonzero(classification.good):
        a = fitter.fit_box(classification.lattice.cube(i, 4))
        budget = omega_coeff * classification.measures[i] / k
        if budget > 0.0:
            omega = exceptional_set(u, a, classification.lattice.cube(i, 2), budget)
        else:
            omega = np.zeros(u.grid.cell_shape, dtype=bool)
        fits.append(NodeFit(int(i), a, omega))
    return fits


def _cell_corner_nodes(mask: np.ndarray) -> np.ndarray:
    """Node mask of all corner nodes of the cells in ``mask``."""
    shape = tuple(c + 1 for c in mask.shape)
    out = np.zeros(shape, dtype=bool)
    if mask.ndim == 1:
        out[1:] |= mask
        out[:-1] |= mask
        return out
    out[1:, 1:] |= mask
    out[1:, :-1] |= mask
    out[:-1, 1:] |= mask
    out[:-1, :-1] |= mask
    return out


def build_tilde_u(
    u: VectorField, classification: NodeClassification, fits: list
) -> tuple:
    """Replace ``u`` by the node fits on the disjointified exceptional sets.

    Later fits never overwrite earlier ones (the registry order is the fixed
    node order), matching the first-wins disjointification of the union of
    exceptional sets.  A node takes a fit value when it is a corner of a
    claimed cell and no earlier fit claimed it.

    Returns ``(tilde_u, omega_union_cells)``.

    Raises
    ------
    MissingFit
        If some good node has no registry entry.
    """
    have = {f.node for f in fits}
    missing = [i for i in np.flatnonzero(classification.good) if i not in have]
    if missing:
        raise MissingFit(f"no fit registered for good node {missing[0]}")
    g = u.grid
    samples = u.samples.copy()
    claimed_cells = np.zeros(g.cell_shape, dtype=bool)
    claimed_nodes = np.zeros(g.node_shape, dtype=bool)
    coords = g.node_coords()
    for f in fits:
        fresh = f.omega & ~claimed_cells
        if not fresh.any():
            continue
        nodes = _cell_corner_nodes(fresh) & ~claimed_nodes
        if nodes.any():
            samples[nodes] = f.map(coords[nodes])
        claimed_cells |= fresh
        claimed_nodes |= _cell_corner_nodes(fresh)
    return VectorField(g, samples), claimed_cells


def _interface_facets(mask: np.ndarray, grid: Grid) -> FacetSet:
    """Interior cell-interface facets between masked and unmasked cells."""
    if grid.dim == 1:
        xs = []
        diff = mask[1:] != mask[:-1]
        for i in np.flatnonzero(diff):
            xs.append(grid.origin[0] + (i + 1) * grid.spacing)
        if not xs:
            return FacetSet.empty(1, grid)
        return FacetSet.from_points(xs, grid=grid)
    segs = []
    h = grid.spacing
    ox, oy = grid.origin
    diff_x = mask[1:, :] != mask[:-1, :]
    for i, j in np.argwhere(diff_x):
        x = ox + (i + 1) * h
        segs.append((x, oy + j * h, x, oy + (j + 1) * h))
    diff_y = mask[:, 1:] != mask[:, :-1]
    for i, j in np.argwhere(diff_y):
        y = oy + (j + 1) * h
        segs.append((ox + i * h, y, ox + (i + 1) * h, y))
    if not segs:
        return FacetSet.empty(2, grid)
    return FacetSet.from_segments(segs, grid=grid)


@dataclass(frozen=True)
class RoughApproximant:
    """The construction's output on the evaluation grid.

    ``u_k`` vanishes identically on the bad region; ``smooth`` keeps the
    mollified values everywhere and supplies the one-sided limits for
    strains and traces on cells bordering the bad region.  ``e_k_cells`` is
    the exceptional set (bad region plus exceptional cells) clipped to the
    evaluation grid.
    """

    grid: Grid
    facets: FacetSet
    classification: NodeClassification
    fits: list
    tilde_u: VectorField
    smooth: VectorField
    u_k: VectorField
    zero_nodes: np.ndarray = field(repr=False)
    bad_cells: np.ndarray = field(repr=False)
    omega_cells: np.ndarray = field(repr=False)
    e_k_cells: np.ndarray = field(repr=False)
    jump_facets: FacetSet = None

    def strain_samples(self) -> np.ndarray:
        """Per-cell strain of the approximant (zero on the bad region)."""
        e = sym_gradient(self.smooth).samples
        return np.where(self.bad_cells[..., None], 0.0, e)


def _restrict_cells(mask: np.ndarray, data: Grid, eval_grid: Grid) -> np.ndarray:
    off = data.node_offset_to(eval_grid)
    sl = tuple(slice(off[d], off[d] + eval_grid.counts[d]) for d in range(data.dim))
    return mask[sl]


def _bad_node_mask(classification: NodeClassification) -> np.ndarray:
    """Data-grid nodes inside some closed bad 8/k-cube."""
    g = classification.grid
    from .cracks import lattice_step_cells

    m2 = lattice_step_cells(g, classification.k)
    mask = np.zeros(g.node_shape, dtype=bool)
    half = 4 * m2
    rel_origin = np.rint(g.origin / g.spacing).astype(int)
    for j in classification.lattice.indices[classification.bad]:
        n_idx = j * 2 * m2 - rel_origin
        sl = []
        for d in range(g.dim):
            lo = max(0, n_idx[d] - half)
            hi = min(g.counts[d], n_idx[d] + half)
            if hi < lo:
                sl = None
                break
            sl.append(slice(lo, hi + 1))
        if sl is not None:
            mask[tuple(sl)] = True
    return mask


def rough_approximate(
    u: VectorField,
    facets: FacetSet,
    theta: float,
    k: float,
    mollifier: Mollifier | None = None,
    domain: Box | None = None,
    *,
    omega_coeff: float = 4.0,
    strict_halo: bool = True,
    classification: NodeClassification | None = None,
) -> RoughApproximant:
    """Build the rough approximant of ``u`` on ``domain`` at scale ``k``.

    ``u`` must be supplied on a fattened grid; ``domain`` (default: the
    grid's domain) is the evaluation region.  With ``strict_halo`` the halo
    must satisfy ``k >= 12 sqrt(dim) / halo``; the relaxed mode (used by the
    jump-cover pipeline, where only thin margins exist) merely requires the
    mollifier support to fit and clips fit cubes to the data.

    Raises
    ------
    HaloTooSmall, ScaleMismatch
    """
    data = u.grid
    if domain is None:
        domain = data.domain()
    eval_grid, _ = data.subgrid(domain)
    halo = min(
        float(np.min(domain.lo - data.domain().lo)),
        float(np.min(data.domain().hi - domain.hi)),
    )
    if strict_halo:
        need = 12.0 * np.sqrt(data.dim) / halo if halo > 0 else np.inf
        if k < need:
            raise HaloTooSmall(
                f"k = {k:g} below 12*sqrt(n)/halo = {need:.3g} for halo {halo:.3g}"
            )
    else:
        if halo < 1.0 / k - 1e-12:
            raise HaloTooSmall("halo thinner than the mollifier support 1/k")
    if mollifier is None:
        mollifier = Mollifier.for_grid(data, k)
    if classification is None:
        classification = classify_nodes(facets, k, theta, grid=data, domain=domain)
    fits = fit_good_nodes(u, classification, omega_coeff)
    tilde_u, omega_cells = build_tilde_u(u, classification, fits)
    smooth = mollify(tilde_u, mollifier, eval_grid)
    bad_nodes = _bad_node_mask(classification)
    off = data.node_offset_to(eval_grid)
    sl = tuple(slice(off[d], off[d] + eval_grid.counts[d] + 1) for d in range(data.dim))
    zero_nodes = bad_nodes[sl]
    u_k = VectorField(eval_grid, np.where(zero_nodes[..., None], 0.0, smooth.samples))
    bad_cells_data = classification.bad_region_cells()
    bad_cells = _restrict_cells(bad_cells_data, data, eval_grid)
    omega_eval = _restrict_cells(omega_cells, data, eval_grid)
    e_k = bad_cells | omega_eval
    jump = _interface_facets(bad_cells, eval_grid)
    return RoughApproximant(
        eval_grid,
        facets,
        classification,
        fits,
        tilde_u,
        smooth,
        u_k,
        zero_nodes,
        bad_cells,
        omega_eval,
        e_k,
        jump,
    )


@dataclass(frozen=True)
class RoughReport:
    """Measured quantities behind the approximation statements."""

    k: float
    theta: float
    vol_ek: float
    lp_gap: float
    bulk_in: float
    bulk_out: float
    jump_measure: float
    jump_input: float
    psi_gap: float
    region_empty: bool

    @property
    def bulk_ratio(self) -> float:
        return self.bulk_out / self.bulk_in if self.bulk_in > 0 else np.nan

    @property
    def jump_ratio(self) -> float:
        if self.jump_input > 0:
            return self.jump_measure / self.jump_input
        return 0.0 if self.jump_measure == 0 else np.inf


def verify_rough_bounds(
    u: VectorField,
    approx: RoughApproximant,
    p: float,
    psi: PsiTerm | None = None,
) -> RoughReport:
    """Measure the five approximation quantities on the evaluation grid.

    ``u`` is the original field on the data grid.  Off the exceptional set
    the gap uses the one-sided smooth values; the psi distance integrates
    over the whole evaluation domain with the actual (cutoff) approximant.
    """
    if psi is None:
        psi = PsiTerm.power(min(1.0, p / 2.0))
    eval_grid = approx.grid
    u_eval = u.restrict(eval_grid)
    vol = eval_grid.cell_volume
    dim = eval_grid.dim
    keep = ~approx.e_k_cells
    gap_p = node_to_cell(
        np.sum((approx.smooth.samples - u_eval.samples) ** 2, axis=-1) ** (p / 2.0), dim
    )
    lp_gap = (float(np.sum(gap_p, where=keep)) * vol) ** (1.0 / p) if keep.any() else 0.0
    e_in = piecewise_strain(u_eval, approx.facets).frobenius_sq() ** (p / 2.0)
    bulk_in = float(np.sum(e_in)) * vol
    e_out_samples = approx.strain_samples()
    if dim == 1:
        fr = e_out_samples[..., 0] ** 2
    else:
        fr = (
            e_out_samples[..., 0] ** 2
            + e_out_samples[..., 1] ** 2
            + 2.0 * e_out_samples[..., 2] ** 2
        )
    bulk_out = float(np.sum(fr ** (p / 2.0))) * vol
    psi_smooth = node_to_cell(
        psi(np.sqrt(np.sum((approx.smooth.samples - u_eval.samples) ** 2, axis=-1))), dim
    )
    psi_zero = node_to_cell(psi(u_eval.magnitude()), dim)
    psi_cells = np.where(approx.bad_cells, psi_zero, psi_smooth)
    psi_gap = float(np.sum(psi_cells)) * vol
    data_domain = u.grid.domain()
    return RoughReport(
        approx.classification.k,
        approx.classification.theta,
        vol_ek=float(approx.e_k_cells.sum()) * vol,
        lp_gap=lp_gap,
        bulk_in=bulk_in,
        bulk_out=bulk_out,
        jump_measure=approx.jump_facets.total_measure(),
        jump_input=facet_measure(approx.facets, data_domain),
        psi_gap=psi_gap,
        region_empty=not bool(keep.any()),
    )
