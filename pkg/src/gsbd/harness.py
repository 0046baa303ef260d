"""Sweep experiments, invariant check suites, and CSV reporting.

Sweep cells run in a bounded thread pool (``GSBD_WORKERS`` caps the size);
every cell is pure and internally sequential, and rows are assembled in cell
order, so outputs are byte-identical across worker counts.  A failing cell
is recorded in its row's error tag and never aborts the sweep.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cracks import FacetSet, classify_nodes, facet_measure
from .density import densify
from .energies import EnergyModel, Schedule, make_model
from .errors import GsbdError
from .grids import Box, Grid, VectorField, pad_field
from .problems import PROBLEM_BUILDERS, tapered_slit_field
from .rough import rough_approximate, verify_rough_bounds
from .solver import alternate_minimize


def worker_count() -> int:
    raw = os.environ.get("GSBD_WORKERS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(1, n) if n > 0 else max(1, os.cpu_count() or 1)


def _run_cells(cells, fn):
    """Evaluate ``fn`` over cells in a bounded pool, results in cell order."""
    workers = worker_count()
    if workers == 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


def format_value(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_csv(path, columns, rows) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_value(row.get(c, "")) for c in columns))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Gamma sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    """One Gamma-convergence experiment over a schedule of levels."""

    problem: str
    load: float
    schedule: Schedule
    model: EnergyModel | None = None
    cells_per_eps: int = 8
    two_start: bool = True
    out: str | None = None

    def __post_init__(self):
        if self.problem not in PROBLEM_BUILDERS:
            raise ValueError(f"unknown problem {self.problem!r}")


SWEEP_COLUMNS = [
    "eps",
    "eta",
    "outer_iterations",
    "bulk",
    "regularization",
    "extra",
    "total",
    "limit_reference",
    "gap",
    "min_v",
    "l1_v_gap",
    "error",
]


def _solve_level(spec: SweepSpec, eps: float, eta: float) -> dict:
    row = {"eps": eps, "eta": eta, "error": ""}
    try:
        builder = PROBLEM_BUILDERS[spec.problem]
        mp = builder(
            spec.load, eps, eta, model=spec.model, cells_per_eps=spec.cells_per_eps
        )
        results = [alternate_minimize(mp.problem)]
        if spec.two_start and mp.crack_seed is not None:
            results.append(alternate_minimize(mp.seeded()))
        best = min(results, key=lambda r: r.trace.last.total)
        last = best.trace.last
        grid = mp.problem.grid
        l1 = float(np.mean(1.0 - best.v.samples)) * grid.domain_measure()
        row.update(
            outer_iterations=len(best.trace.rows) - 1,
            bulk=last.bulk,
            regularization=last.regularization,
            extra=last.extra,
            total=last.total,
            limit_reference=mp.reference,
            gap=last.total - mp.reference,
            min_v=last.min_v,
            l1_v_gap=l1,
        )
    except GsbdError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def gamma_sweep(spec: SweepSpec) -> list:
    """One staggered solve per schedule level; returns SWEEP_COLUMNS rows.

    Each level runs from the elastic start and (by default) from a cracked
    profile start, keeping the lower-energy state: staggered descent alone
    cannot break the symmetry of the homogeneous branch, so the two-start
    strategy is what lets the energetics pick the branch.
    """
    cells = list(spec.schedule)
    return _run_cells(cells, lambda c: _solve_level(spec, c[0], c[1]))


# ---------------------------------------------------------------------------
# Density sweeps
# ---------------------------------------------------------------------------


ROUGH_COLUMNS = ["k", "theta", "vol_ek", "lp_gap", "bulk_ratio", "jump_ratio", "psi_gap", "error"]
DENSIFY_COLUMNS = [
    "eps", "theta", "k", "jump_symdiff", "strain_lp_gap", "vol_ek", "trace_tau",
    "psi_gap", "error",
]


def rough_sweep(
    u_source, facets: FacetSet, thetas, ks, p: float = 2.0, domain: Box | None = None
) -> list:
    """Cross product over (theta, k) of the rough construction's report.

    ``u_source`` is either a fattened field covering the strict halo for
    every k, or a callable ``k -> VectorField`` producing one.
    """
    cells = [(theta, k) for theta in thetas for k in ks]

    def run(cell):
        theta, k = cell
        row = {"theta": theta, "k": k, "error": ""}
        try:
            u = u_source(k) if callable(u_source) else u_source
            approx = rough_approximate(u, facets, theta, k, domain=domain)
            rep = verify_rough_bounds(u, approx, p)
            row.update(
                vol_ek=rep.vol_ek,
                lp_gap=rep.lp_gap,
                bulk_ratio=rep.bulk_ratio,
                jump_ratio=rep.jump_ratio,
                psi_gap=rep.psi_gap,
            )
        except GsbdError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        return row

    return _run_cells(cells, run)


def densify_sweep(
    u: VectorField, facets: FacetSet, eps_list, thetas, ks, p: float = 2.0
) -> list:
    """Cross product over (eps, theta, k) of the full pipeline's metrics."""
    cells = [(e, t, k) for e in eps_list for t in thetas for k in ks]

    def run(cell):
        eps, theta, k = cell
        row = {"eps": eps, "theta": theta, "k": k, "error": ""}
        try:
            res = densify(u, facets, eps, theta, k, p=p)
            m = res.metrics
            row.update(
                jump_symdiff=m["jump_symdiff"],
                strain_lp_gap=m["strain_lp_gap"],
                vol_ek=m["vol_ek"],
                trace_tau=m["trace_tau"],
                psi_gap=m["psi_gap"],
            )
        except GsbdError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        return row

    return _run_cells(cells, run)


# ---------------------------------------------------------------------------
# Invariant check suites
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""


def _check(results, suite, name, condition, detail=""):
    results.append(CheckResult(suite, name, bool(condition), detail))


def check_grid_fields(rng=None) -> list:
    """Rigid nullspace, slice identity and order, mollifier fixed points."""
    from .grids import Mollifier, affine_field, mollify, slice_field, sym_gradient

    rng = rng or np.random.default_rng(7)
    out = []
    worst = 0.0
    for _ in range(1000):
        spin = rng.normal()
        b = rng.normal(size=2)
        g = Grid(rng.integers(-2, 3, size=2).astype(float) * 0.0625, 1.0 / 16, (16, 16))
        u = affine_field(g, b, [[0.0, -spin], [spin, 0.0]])
        worst = max(worst, float(np.abs(sym_gradient(u).samples).max()))
    _check(out, "grid", "rigid_nullspace", worst <= 1e-12, f"max |e| = {worst:.2e}")

    g = Grid(np.zeros(2), 1.0 / 32, (32, 32))
    A = np.array([[0.3, 0.1], [0.2, -0.4]])
    u = affine_field(g, [0.05, -0.02], A)
    e_sym = 0.5 * (A + A.T)
    worst = 0.0
    for xi in ([1.0, 0.0], [0.0, 1.0], [1 / np.sqrt(2), 1 / np.sqrt(2)],
               [1 / np.sqrt(2), -1 / np.sqrt(2)]):
        xi = np.asarray(xi)
        s = slice_field(u, xi, np.array([0.0, 0.31]) if xi[0] else np.array([0.41, 0.0]))
        exact = float(xi @ e_sym @ xi)
        worst = max(worst, float(np.abs(s.deriv - exact).max()))
    _check(out, "grid", "slice_identity_affine", worst <= 1e-12, f"max err = {worst:.2e}")

    errs = []
    for cells in (16, 32, 64):
        gq = Grid.unit(2, cells)
        uq = VectorField.from_function(
            gq, lambda pt: np.array([pt[0] ** 2 + 0.5 * pt[1] ** 2, pt[0] * pt[1]])
        )
        xi = np.array([1.0, 1.0]) / np.sqrt(2)
        worst_h = 0.0
        # keep the sampling step above the finest grid spacing: the central
        # difference then averages the interpolant's sawtooth and converges
        # at second order
        for offset in (0.11, 0.23, 0.37):
            s = slice_field(uq, xi, np.array([offset, 0.0]), num_samples=25)
            pts = np.array([offset, 0.0]) + s.deriv_t[:, None] * xi
            # for u = (x^2 + y^2/2, x y): exx = 2x, eyy = x, exy = y
            exact = (
                2 * pts[:, 0] * xi[0] ** 2
                + pts[:, 0] * xi[1] ** 2
                + 2 * pts[:, 1] * xi[0] * xi[1]
            )
            worst_h = max(worst_h, float(np.abs(s.deriv - exact).max()))
        errs.append(worst_h)
    order = float(np.log2(errs[0] / errs[-1]) / (len(errs) - 1))
    _check(out, "grid", "slice_quadratic_order", order >= 1.9,
           f"errors {errs}, observed order {order:.2f}")

    g = Grid(np.zeros(2), 1.0 / 32, (32, 32))
    m = Mollifier.for_grid(g, 8.0)
    _check(out, "grid", "mollifier_weight_sum", abs(m.weight_sum() - 1.0) <= 1e-12,
           f"sum = {m.weight_sum()!r}")
    _check(out, "grid", "mollifier_first_moment",
           float(np.abs(m.first_moment()).max()) <= 1e-12)
    big = Grid(np.array([-0.25, -0.25]), 1.0 / 32, (48, 48))
    ub = affine_field(big, [1.0, -2.0], [[0.2, 0.1], [0.3, -0.4]])
    mb = Mollifier.for_grid(big, 8.0)
    target, _ = big.subgrid(Box([0.0, 0.0], [1.0, 1.0]))
    smoothed = mollify(ub, mb, target)
    exact = affine_field(target, [1.0, -2.0], [[0.2, 0.1], [0.3, -0.4]])
    gap = float(np.abs(smoothed.samples - exact.samples).max())
    _check(out, "grid", "mollifier_affine_invariance", gap <= 1e-12, f"gap = {gap:.2e}")
    return out


def check_crack_geometry(rng=None) -> list:
    """Facet measure additivity, classification monotonicity, counting bound."""
    rng = rng or np.random.default_rng(11)
    out = []
    g = Grid(np.zeros(2), 1.0 / 64, (64, 64))
    segs = [(0.25, 0.5, 0.75, 0.5), (0.5, 0.25, 0.5, 0.125), (0.125, 0.25, 0.625, 0.25)]
    F = FacetSet.from_segments(segs, grid=g)
    total = F.total_measure()
    parts = 0.0
    n_tiles = 8
    for i in range(n_tiles):
        for j in range(n_tiles):
            tile = Box(
                [i / n_tiles, j / n_tiles], [(i + 1) / n_tiles, (j + 1) / n_tiles]
            )
            # half-open tiling so shared edges are not double counted
            parts += facet_measure(F, tile) - facet_measure(
                F, Box(tile.lo, [tile.hi[0], tile.lo[1]])
            ) - facet_measure(F, Box(tile.lo, [tile.lo[0], tile.hi[1]]))
    rel = abs(parts - total) / total
    _check(out, "crack", "facet_measure_additivity", rel <= 1e-10,
           f"relative defect {rel:.2e}")

    c_coarse = classify_nodes(F, 16, 0.4)
    c_fine = classify_nodes(F, 16, 0.1)
    inclusion = bool(np.all(~c_coarse.bad | c_fine.bad))
    _check(out, "crack", "bad_set_theta_monotone", inclusion)

    for k in (16, 32):
        c = classify_nodes(F, k, 0.1)
        bound = total * k ** (g.dim - 1) / 0.1
        _check(out, "crack", f"bad_count_bound_k{k}", int(c.bad.sum()) <= bound,
               f"{int(c.bad.sum())} <= {bound:.1f}")
        overlap_bound = facet_measure(F, g.domain().pad(8.0 / k)) * 8**g.dim
        mass = int(c.bad.sum()) * 0.1 * k ** (-(g.dim - 1))
        _check(out, "crack", f"bad_mass_overlap_bound_k{k}", mass <= overlap_bound,
               f"{mass:.3f} <= {overlap_bound:.3f}")
    return out


def check_korn_fit(rng=None) -> list:
    """Fit equivariance, exceptional-set monotonicity, overlap vertex property."""
    from .grids import sym_gradient
    from .kornfit import (
        RigidAffineMap,
        affine_overlap_gap,
        fit_rigid_affine,
        fit_with_exceptional_set,
    )

    rng = rng or np.random.default_rng(13)
    out = []
    g = Grid(np.zeros(2), 1.0 / 32, (32, 32))
    x = g.node_coords()
    base = np.stack([0.2 * x[..., 1] ** 2, 0.1 * x[..., 0]], axis=-1)
    u = VectorField(g, base)
    cube = Box([0.25, 0.25], [0.75, 0.75])
    fit_u = fit_rigid_affine(u, cube)
    shift = RigidAffineMap(np.array([0.3, -0.1]), 0.25)
    u_shift = VectorField(g, base + shift(x))
    fit_shift = fit_rigid_affine(u_shift, cube)
    gap = max(
        float(np.abs(fit_shift.b - fit_u.b - shift.b).max()),
        abs(fit_shift.spin - fit_u.spin - shift.spin),
    )
    _check(out, "korn", "fit_equivariance", gap <= 1e-9, f"gap = {gap:.2e}")

    rigid_field = fit_u.as_field(g)
    _check(out, "korn", "fit_map_zero_strain",
           float(np.abs(sym_gradient(rigid_field).samples).max()) <= 1e-12)

    window = Box([0.3, 0.3], [0.7, 0.7])
    residuals = []
    for budget in (0.0, 0.01, 0.02, 0.05, 0.1):
        fr = fit_with_exceptional_set(u, cube, window, budget)
        residuals.append(fr.residual_lp)
    monotone = all(b <= a + 1e-14 for a, b in zip(residuals, residuals[1:]))
    _check(out, "korn", "exceptional_set_monotone", monotone, f"residuals {residuals}")

    a0 = RigidAffineMap(np.array([0.1, 0.4]), -0.3)
    a1 = RigidAffineMap(np.array([-0.2, 0.1]), 0.5)
    b0 = Box([0.0, 0.0], [0.6, 0.6])
    b1 = Box([0.4, 0.2], [1.0, 0.9])
    rep = affine_overlap_gap(a0, a1, b0, b1)
    inter = b0.intersect(b1)
    xs = np.linspace(inter.lo[0], inter.hi[0], 41)
    ys = np.linspace(inter.lo[1], inter.hi[1], 41)
    mesh = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    dense = float(np.max(np.linalg.norm(a0(mesh) - a1(mesh), axis=-1)))
    _check(out, "korn", "overlap_sup_at_vertex", rep.gap >= dense - 1e-12,
           f"corner sup {rep.gap:.6f} vs dense {dense:.6f}")
    return out


CHECK_SUITES = {
    "grid": check_grid_fields,
    "crack": check_crack_geometry,
    "korn": check_korn_fit,
}


def run_checks(suites=("grid", "crack", "korn")) -> list:
    results = []
    for name in suites:
        results.extend(CHECK_SUITES[name]())
    return results
