"""Shipped model problems and synthetic fields.

The 1D bar is the workhorse with the exact reference ``min(U^2, alpha)``:
an elastic branch for small end displacement and a single-crack branch for
large.  The 2D problems reduce to the same competition; their references
are the 1D-reduced energies where exact and otherwise labeled as
extrapolated.  The tapered slit is the synthetic crack field driving the
approximation pipelines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cracks import FacetSet
from .energies import EnergyModel, make_model
from .grids import Grid, ScalarField, VectorField
from .solver import SolveProblem


# ---------------------------------------------------------------------------
# Synthetic fields
# ---------------------------------------------------------------------------


def smoothstep(t: np.ndarray) -> np.ndarray:
    """Quintic ramp: 0 below 0, 1 above 1, C^2 in between."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def tapered_slit_field(
    grid: Grid,
    x_lo: float = 0.3055,
    x_hi: float = 0.8055,
    level: float = 0.5,
    amplitude: float = 0.25,
    background: float = 0.3,
    ramp: float = 0.2,
) -> VectorField:
    """Displacement jumping across a horizontal slit with tapered amplitude.

    The jump amplitude rises from zero at the tips over ``ramp`` (a partial
    crack cannot bound a piecewise-constant displacement, so the opening
    must die off at the tips); an affine shear ``background * (y, x)`` keeps
    the strain integral bounded away from zero.  Nodes on the slit line
    carry the upper-side trace.
    """
    x = grid.node_coords()
    gx = amplitude * smoothstep(np.minimum(x[..., 0] - x_lo, x_hi - x[..., 0]) / ramp)
    gx = np.where((x[..., 0] > x_lo) & (x[..., 0] < x_hi), gx, 0.0)
    sigma = np.where(x[..., 1] >= level, 0.5, -0.5)
    u = np.stack(
        [background * x[..., 1], background * x[..., 0] + gx * sigma], axis=-1
    )
    return VectorField(grid, u)


def slit_facets(
    grid: Grid, x_lo: float = 0.3055, x_hi: float = 0.8055, level: float = 0.5,
    amplitude: float = 0.25,
) -> FacetSet:
    return FacetSet.from_segments([(x_lo, level, x_hi, level)], [amplitude], grid=grid)


# ---------------------------------------------------------------------------
# Model problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelProblem:
    """A ready-to-solve instance plus its limit reference energy."""

    problem: SolveProblem
    reference: float
    reference_kind: str  # "analytic" | "extrapolated"
    crack_seed: ScalarField | None = None
    crack_u_seed: VectorField | None = None

    def seeded(self) -> SolveProblem:
        """The same problem started from the cracked initial state."""
        if self.crack_seed is None:
            return self.problem
        from dataclasses import replace

        return replace(self.problem, v_init=self.crack_seed, u_init=self.crack_u_seed)


def bar_problem(
    load: float,
    eps: float,
    eta: float | None = None,
    model: EnergyModel | None = None,
    cells_per_eps: int = 8,
    crack_at: float = 0.5,
) -> ModelProblem:
    """1D bar on (0, 1): u(0) = 0, u(1) = U, phase pinned to 1 at the ends.

    Reference energy ``min(U^2, alpha)``: the elastic branch keeps the bar
    intact, the crack branch pays one surface opening.  The cracked start
    places the classical optimal profile at ``crack_at``.
    """
    if model is None:
        model = make_model(p=2.0)
    if eta is None:
        eta = eps**2
    h = eps / cells_per_eps
    n = int(round(1.0 / h))
    grid = Grid(np.zeros(1), 1.0 / n, (n,))
    mask = np.zeros(grid.node_shape, dtype=bool)
    mask[0] = mask[-1] = True
    vals = np.zeros(grid.node_shape + (1,))
    vals[-1, 0] = load
    problem = SolveProblem(
        grid=grid,
        model=model,
        eps=eps,
        eta=eta,
        dirichlet_mask=mask,
        dirichlet_values=vals,
        v_one_mask=mask,
    )
    x = grid.node_coords()[..., 0]
    v_seed = 1.0 - (1.0 - eta) * np.exp(-np.abs(x - crack_at) / (2.0 * eps))
    u_seed = np.where(x < crack_at, 0.0, load)[..., None]
    return ModelProblem(
        problem,
        reference=min(load**2, model.alpha),
        reference_kind="analytic",
        crack_seed=ScalarField(grid, v_seed),
        crack_u_seed=VectorField(grid, u_seed),
    )


def antiplane_problem(
    load: float,
    eps: float,
    eta: float | None = None,
    model: EnergyModel | None = None,
    cells_per_eps: int = 4,
) -> ModelProblem:
    """2D strip sheared along x: u = (0, 0) at the bottom, (U, 0) at the top.

    The displacement stays x-directed and depends mainly on y, an antiplane
    shear carried by the off-diagonal strain; a horizontal crack relieves
    it.  1D reduction of the energy competition: bulk ``U^2 / 2`` (only the
    shear component is active) against surface ``alpha``, so the reference
    ``min(U^2 / 2, alpha)`` is labeled analytic for the shipped density.
    """
    if model is None:
        model = make_model(p=2.0)
    if eta is None:
        eta = eps**2
    h = eps / cells_per_eps
    n = max(8, int(round(1.0 / h)))
    grid = Grid(np.zeros(2), 1.0 / n, (n, n))
    mask = np.zeros(grid.node_shape, dtype=bool)
    mask[:, 0] = mask[:, -1] = True
    vals = np.zeros(grid.node_shape + (2,))
    vals[:, -1, 0] = load
    problem = SolveProblem(
        grid=grid, model=model, eps=eps, eta=eta,
        dirichlet_mask=mask, dirichlet_values=vals, v_one_mask=mask,
    )
    y = grid.node_coords()[..., 1]
    v_seed = 1.0 - (1.0 - eta) * np.exp(-np.abs(y - 0.5) / (2.0 * eps))
    u_seed = np.zeros(grid.node_shape + (2,))
    u_seed[..., 0] = np.where(y < 0.5, 0.0, load)
    return ModelProblem(
        problem,
        reference=min(load**2 / 2.0, model.alpha),
        reference_kind="analytic",
        crack_seed=ScalarField(grid, v_seed),
        crack_u_seed=VectorField(grid, u_seed),
    )


def mode1_problem(
    load: float,
    eps: float,
    eta: float | None = None,
    model: EnergyModel | None = None,
    cells_per_eps: int = 4,
) -> ModelProblem:
    """2D square stretched vertically: u = -+ (0, U/2) on the bottom/top edges.

    Uniform stretch energy ``U^2`` against a horizontal crack of surface
    ``alpha``; the uniform-strain reduction is exact for the shipped
    density, finer references would need Richardson extrapolation and are
    labeled accordingly.
    """
    if model is None:
        model = make_model(p=2.0)
    if eta is None:
        eta = eps**2
    h = eps / cells_per_eps
    n = max(8, int(round(1.0 / h)))
    grid = Grid(np.zeros(2), 1.0 / n, (n, n))
    mask = np.zeros(grid.node_shape, dtype=bool)
    mask[:, 0] = mask[:, -1] = True
    vals = np.zeros(grid.node_shape + (2,))
    vals[:, 0, 1] = -load / 2.0
    vals[:, -1, 1] = load / 2.0
    problem = SolveProblem(
        grid=grid, model=model, eps=eps, eta=eta,
        dirichlet_mask=mask, dirichlet_values=vals, v_one_mask=mask,
    )
    y = grid.node_coords()[..., 1]
    v_seed = 1.0 - (1.0 - eta) * np.exp(-np.abs(y - 0.5) / (2.0 * eps))
    u_seed = np.zeros(grid.node_shape + (2,))
    u_seed[..., 1] = np.where(y < 0.5, -load / 2.0, load / 2.0)
    return ModelProblem(
        problem,
        reference=min(load**2, model.alpha),
        reference_kind="analytic",
        crack_seed=ScalarField(grid, v_seed),
        crack_u_seed=VectorField(grid, u_seed),
    )


PROBLEM_BUILDERS = {
    "1d-bar": bar_problem,
    "2d-antiplane": antiplane_problem,
    "2d-mode1": mode1_problem,
}
