"""Bulk/surface energy models and their discrete evaluation.

An :class:`EnergyModel` bundles the bulk density ``W(s, e)`` with p-growth,
the degradation ``d``, the gradient exponent ``q`` and weight ``a``, the
fidelity term ``psi`` or Dirichlet data, and the ``(eps, eta)`` schedule.
The derived surface calibration is

    alpha = 2 (q')^(1/q') (a q)^(1/q) * integral_0^1 d(s)^(1/q') ds,

which equals 1 for the quadratic degradation ``d(s) = (1-s)^2 / 4`` with
``q = 2`` and ``a = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .cracks import FacetSet, facet_measure, piecewise_strain
from .errors import ConstraintViolation, QuadratureFailure
from .grids import (
    Box,
    Grid,
    ScalarField,
    VectorField,
    node_to_cell,
    scalar_gradient,
    sym_gradient,
)


# ---------------------------------------------------------------------------
# Bulk densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BulkDensity:
    """Density ``W(s, e) = s * phi(e)`` with convex ``phi`` of p-growth.

    ``phi`` and ``phi_strain_derivative`` act on stored strain components
    ``(xx,)`` or ``(xx, yy, xy)``; the derivative is taken with respect to
    those stored components.  ``c1..c4`` witness the growth envelope
    ``s(c1|e|^p - c2) <= W(s, e) <= s(c3|e|^p + c4)``.
    """

    name: str
    p: float
    phi: Callable
    phi_strain_derivative: Callable
    c1: float
    c2: float
    c3: float
    c4: float

    def __call__(self, s, e_samples: np.ndarray) -> np.ndarray:
        return np.asarray(s) * self.phi(e_samples)

    def strain_derivative(self, s, e_samples: np.ndarray) -> np.ndarray:
        return np.asarray(s)[..., None] * self.phi_strain_derivative(e_samples)

    @property
    def linear_in_s(self) -> bool:
        return True


def _frob_sq(e: np.ndarray) -> np.ndarray:
    if e.shape[-1] == 1:
        return e[..., 0] ** 2
    return e[..., 0] ** 2 + e[..., 1] ** 2 + 2.0 * e[..., 2] ** 2


def pnorm_bulk(p: float) -> BulkDensity:
    """``W(s, e) = s |e|^p`` with the Frobenius norm (off-diagonal doubled)."""

    def phi(e):
        return _frob_sq(e) ** (p / 2.0)

    def dphi(e):
        # d/de of (|e|^2)^(p/2) = p |e|^(p-2) * (component pattern)
        f = _frob_sq(e)
        base = np.where(f > 0, f, 1.0) ** (p / 2.0 - 1.0)
        base = np.where(f > 0, base, 0.0) * p
        g = np.empty_like(e)
        g[..., 0] = base * e[..., 0]
        if e.shape[-1] == 3:
            g[..., 1] = base * e[..., 1]
            g[..., 2] = base * 2.0 * e[..., 2]
        return g

    return BulkDensity(f"pnorm(p={p:g})", p, phi, dphi, 1.0, 1e-9, 1.0, 1e-9)


def lame_bulk(lam: float, mu: float) -> BulkDensity:
    """Quadratic isotropic density ``W(s, e) = s (lam tr(e)^2 + 2 mu e:e)``."""

    def phi(e):
        if e.shape[-1] == 1:
            tr = e[..., 0]
            return lam * tr**2 + 2.0 * mu * e[..., 0] ** 2
        tr = e[..., 0] + e[..., 1]
        return lam * tr**2 + 2.0 * mu * _frob_sq(e)

    def dphi(e):
        g = np.empty_like(e)
        if e.shape[-1] == 1:
            g[..., 0] = 2.0 * lam * e[..., 0] + 4.0 * mu * e[..., 0]
            return g
        tr = e[..., 0] + e[..., 1]
        g[..., 0] = 2.0 * lam * tr + 4.0 * mu * e[..., 0]
        g[..., 1] = 2.0 * lam * tr + 4.0 * mu * e[..., 1]
        g[..., 2] = 8.0 * mu * e[..., 2]
        return g

    n = 2
    return BulkDensity(
        f"lame(lambda={lam:g},mu={mu:g})", 2.0, phi, dphi, 2.0 * mu, 1e-9,
        n * lam + 2.0 * mu, 1e-9,
    )


# ---------------------------------------------------------------------------
# Degradations and fidelity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Degradation:
    """Continuous decreasing ``d`` on [0, 1] with ``d(1) = 0``.

    ``poly`` holds ``(d0, d1, d2)`` when ``d`` is the quadratic polynomial
    ``d0 + d1 s + d2 s^2`` (enables the linear phase half-step).
    """

    name: str
    fn: Callable
    poly: tuple | None = None

    def __call__(self, s):
        return self.fn(np.asarray(s, dtype=float))


AT2 = Degradation("at2", lambda s: (1.0 - s) ** 2 / 4.0, poly=(0.25, -0.5, 0.25))
AT1 = Degradation("at1", lambda s: (1.0 - s) / 2.0, poly=(0.5, -0.5, 0.0))


@dataclass(frozen=True)
class PsiTerm:
    """Fidelity weight ``psi(s) = s^r`` (or custom) with its subadditivity constant."""

    fn: Callable
    r: float
    c_psi: float

    @classmethod
    def power(cls, r: float) -> "PsiTerm":
        return cls(lambda s: np.asarray(s, dtype=float) ** r, r, max(1.0, 2.0 ** (r - 1.0)))

    def __call__(self, s):
        return self.fn(np.asarray(s, dtype=float))


@dataclass(frozen=True)
class Schedule:
    """Strictly decreasing ``eps`` levels with ``eta/eps^(p-1)`` non-increasing."""

    levels: tuple  # of (eps, eta)

    def __post_init__(self):
        levels = tuple((float(e), float(n)) for e, n in self.levels)
        if not levels:
            raise ValueError("schedule must not be empty")
        eps = [e for e, _ in levels]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps must be strictly decreasing")
        object.__setattr__(self, "levels", levels)

    def validate_ratios(self, p: float) -> None:
        r = [n / e ** (p - 1.0) for e, n in self.levels]
        if any(b > a * (1 + 1e-12) for a, b in zip(r, r[1:])):
            raise ValueError("eta/eps^(p-1) must be non-increasing along the schedule")

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)


# ---------------------------------------------------------------------------
# The model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyModel:
    """Everything needed to evaluate the regularized and limit energies."""

    bulk: BulkDensity
    degradation: Degradation = AT2
    q: float = 2.0
    a: float = 1.0
    psi: PsiTerm | None = None
    g: VectorField | None = None
    u0: VectorField | None = None
    dirichlet_facets: FacetSet | None = None
    schedule: Schedule | None = None
    trace_tol: float = 1e-6

    @property
    def p(self) -> float:
        return self.bulk.p

    @cached_property
    def alpha(self) -> float:
        return alpha_constant(self)

    def default_psi(self) -> PsiTerm:
        return self.psi if self.psi is not None else PsiTerm.power(min(1.0, self.p / 2.0))


def make_model(
    p: float = 2.0,
    degradation: str | Degradation = "at2",
    q: float = 2.0,
    a: float = 1.0,
    lame: tuple | None = None,
    psi_r: float | None = None,
    **kwargs,
) -> EnergyModel:
    bulk = lame_bulk(*lame) if lame is not None else pnorm_bulk(p)
    if isinstance(degradation, str):
        degradation = {"at2": AT2, "at1": AT1}[degradation]
    psi = PsiTerm.power(psi_r) if psi_r is not None else None
    return EnergyModel(bulk=bulk, degradation=degradation, q=q, a=a, psi=psi, **kwargs)


def validate_model(model: EnergyModel, rng: np.random.Generator | None = None) -> None:
    """Spot-check the structural assumptions on random samples.

    Checks the growth envelope and monotonicity of ``W``, ``W(s, 0) = 0``,
    that ``d`` decreases with ``d(1) = 0``, and the subadditivity-type bound
    on ``psi``.  Raises ``ValueError`` on the first violation.
    """
    rng = rng or np.random.default_rng(41)
    p = model.p
    ncomp = 3
    s = rng.uniform(0.0, 1.0, size=64)
    e = rng.normal(size=(64, ncomp))
    w = model.bulk(s, e)
    norm_p = _frob_sq(e) ** (p / 2.0)
    lo = s * (model.bulk.c1 * norm_p - model.bulk.c2)
    hi = s * (model.bulk.c3 * norm_p + model.bulk.c4)
    if np.any(w < lo - 1e-9) or np.any(w > hi + 1e-9):
        raise ValueError("bulk density violates its growth envelope")
    if np.any(np.abs(model.bulk(s, np.zeros((64, ncomp)))) > 1e-12):
        raise ValueError("W(s, 0) must vanish")
    s2 = np.minimum(1.0, s + rng.uniform(0.0, 0.5, size=64))
    if np.any(model.bulk(s2, e) < model.bulk(s, e) - 1e-12):
        raise ValueError("W must be nondecreasing in s")
    grid_s = np.linspace(0.0, 1.0, 257)
    d = model.degradation(grid_s)
    if np.any(np.diff(d) > 1e-12) or abs(d[-1]) > 1e-12 or np.any(d < -1e-12):
        raise ValueError("degradation must decrease to d(1) = 0")
    psi = model.default_psi()
    x = rng.uniform(0.0, 10.0, size=64)
    y = rng.uniform(0.0, 10.0, size=64)
    if np.any(psi(x + y) > psi.c_psi * (psi(x) + psi(y)) + 1e-9):
        raise ValueError("psi violates its subadditivity constant")
    if abs(float(psi(0.0))) > 1e-12:
        raise ValueError("psi(0) must vanish")


# ---------------------------------------------------------------------------
# Surface calibration
# ---------------------------------------------------------------------------


def _adaptive_simpson(f, a, b, tol, max_depth=60):
    def simpson(fa, fm, fb, a_, b_):
        return (b_ - a_) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a_, b_, fa, fm, fb, whole, tol_, depth):
        m = 0.5 * (a_ + b_)
        lm = 0.5 * (a_ + m)
        rm = 0.5 * (m + b_)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a_, m)
        right = simpson(fm, frm, fb, m, b_)
        if depth >= max_depth:
            raise QuadratureFailure("adaptive quadrature depth exhausted")
        if abs(left + right - whole) <= 15.0 * tol_:
            return left + right + (left + right - whole) / 15.0
        return recurse(a_, m, fa, flm, fm, left, tol_ / 2.0, depth + 1) + recurse(
            m, b_, fm, frm, fb, right, tol_ / 2.0, depth + 1
        )

    fa, fb = f(a), f(b)
    fm = f(0.5 * (a + b))
    whole = simpson(fa, fm, fb, a, b)
    return recurse(a, b, fa, fm, fb, whole, tol, 0)


def alpha_constant(model: EnergyModel, tol: float = 1e-10) -> float:
    """Surface calibration ``2 (q')^(1/q') (a q)^(1/q) int_0^1 d^(1/q')``.

    Adaptive Simpson quadrature to absolute tolerance ``tol``; equals 1
    exactly for the at2 degradation with ``q = 2`` and ``a = 1``.
    """
    q = model.q
    qp = q / (q - 1.0)
    integral = _adaptive_simpson(
        lambda s: float(model.degradation(s)) ** (1.0 / qp), 0.0, 1.0, tol
    )
    return 2.0 * qp ** (1.0 / qp) * (model.a * q) ** (1.0 / q) * integral


# ---------------------------------------------------------------------------
# Energy evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyBreakdown:
    bulk: float
    surface: float
    extra: float

    @property
    def total(self) -> float:
        return self.bulk + self.surface + self.extra


@dataclass(frozen=True)
class ATBreakdown:
    bulk: float
    regularization: float
    extra: float

    @property
    def total(self) -> float:
        return self.bulk + self.regularization + self.extra


def _cell_integral(grid: Grid, cell_values: np.ndarray) -> float:
    return float(np.sum(cell_values)) * grid.cell_volume


def _fidelity_cells(u: VectorField, model: EnergyModel) -> np.ndarray:
    psi = model.default_psi()
    gap = np.sqrt(np.sum((u.samples - model.g.samples) ** 2, axis=-1))
    return node_to_cell(psi(gap), u.grid.dim)


def griffith_energy(u: VectorField, facets: FacetSet, model: EnergyModel) -> EnergyBreakdown:
    """Sharp-interface energy: bulk at full stiffness plus ``alpha`` times crack length.

    The strain is evaluated per cell ignoring cross-facet differences, so
    callers pass displacements that are piecewise smooth relative to the
    facet set.
    """
    e = piecewise_strain(u, facets)
    bulk = _cell_integral(u.grid, model.bulk(1.0, e.samples))
    surface = model.alpha * facet_measure(facets, u.grid.domain())
    return EnergyBreakdown(bulk, surface, 0.0)


def dirichlet_node_mask(grid: Grid, facets: FacetSet) -> np.ndarray:
    """Boolean node mask of the nodes lying on the given boundary facets."""
    mask = np.zeros(grid.node_shape, dtype=bool)
    x = grid.node_coords()
    tol = 1e-9 * grid.spacing
    for i in range(len(facets)):
        if grid.dim == 1:
            mask |= np.abs(x[..., 0] - facets.p0[i, 0]) <= tol
            continue
        p0, p1 = facets.p0[i], facets.p1[i]
        axis = int(np.argmax(np.abs(p1 - p0)))
        c_axis = 1 - axis
        lo, hi = sorted((p0[axis], p1[axis]))
        on_line = np.abs(x[..., c_axis] - p0[c_axis]) <= tol
        in_span = (x[..., axis] >= lo - tol) & (x[..., axis] <= hi + tol)
        mask |= on_line & in_span
    return mask


def _check_bounds(v: ScalarField, eta: float) -> None:
    bad_low = v.samples < eta - 1e-12
    bad_high = v.samples > 1.0 + 1e-12
    if bad_low.any() or bad_high.any():
        idx = np.argwhere(bad_low | bad_high)[0]
        raise ConstraintViolation(
            f"phase value {v.samples[tuple(idx)]:.6g} outside [{eta:.3g}, 1] "
            f"at node {tuple(int(i) for i in idx)}",
            node_index=tuple(int(i) for i in idx),
        )


def at_energy(
    u: VectorField,
    v: ScalarField,
    eps: float,
    model: EnergyModel,
    variant: str = "plain",
    eta: float = 0.0,
) -> ATBreakdown:
    """Regularized energy ``W(v, e(u)) + d(v)/eps + a eps^(q-1) |grad v|^q``.

    All terms use the same cell quadrature: node quantities are averaged to
    cells, gradients are cell-centered.  The fidelity variant adds the
    ``psi(|u - g|)`` integral; the Dirichlet variant additionally requires
    ``u = u0`` and ``v = 1`` on the Dirichlet nodes.

    Raises
    ------
    ConstraintViolation
        If ``v`` leaves ``[eta, 1]`` (with the offending node index) or
        Dirichlet rows are violated.
    """
    _check_bounds(v, eta)
    grid = u.grid
    if variant == "dirichlet":
        mask = dirichlet_node_mask(grid, model.dirichlet_facets)
        scale = max(1.0, float(np.abs(model.u0.samples).max()))
        if np.any(np.abs(u.samples[mask] - model.u0.samples[mask]) > 1e-8 * scale):
            raise ConstraintViolation("u does not match u0 on the Dirichlet nodes")
        if np.any(np.abs(v.samples[mask] - 1.0) > 1e-10):
            raise ConstraintViolation("v must equal 1 on the Dirichlet nodes")
    e = sym_gradient(u)
    v_c = node_to_cell(v.samples, grid.dim)
    bulk = _cell_integral(grid, model.bulk(v_c, e.samples))
    grad_v = scalar_gradient(v)
    grad_norm_q = np.sum(grad_v**2, axis=-1) ** (model.q / 2.0)
    reg_cells = model.degradation(v_c) / eps + model.a * eps ** (model.q - 1.0) * grad_norm_q
    reg = _cell_integral(grid, reg_cells)
    extra = 0.0
    if variant == "fidelity":
        extra = _cell_integral(grid, _fidelity_cells(u, model))
    return ATBreakdown(bulk, reg, extra)


def limit_energy(
    u: VectorField, facets: FacetSet, model: EnergyModel, variant: str = "plain"
) -> EnergyBreakdown:
    """Sharp-interface energy with the variant's compliance term.

    The Dirichlet variant adds ``alpha`` times the length of the Dirichlet
    facets where the discrete boundary trace of ``u`` differs from ``u0`` by
    more than the trace tolerance; whole facets count, never fractions.
    """
    base = griffith_energy(u, facets, model)
    extra = 0.0
    if variant == "fidelity":
        extra = _cell_integral(u.grid, _fidelity_cells(u, model))
    elif variant == "dirichlet":
        scale = max(1.0, float(np.abs(model.u0.samples).max()))
        tol = model.trace_tol * scale
        grid = u.grid
        x = grid.node_coords()
        mism_len = 0.0
        for i in range(len(model.dirichlet_facets)):
            f1 = FacetSet(
                model.dirichlet_facets.dim,
                model.dirichlet_facets.p0[i : i + 1],
                model.dirichlet_facets.p1[i : i + 1],
                model.dirichlet_facets.normals[i : i + 1],
                model.dirichlet_facets.amplitudes[i : i + 1],
            )
            mask = dirichlet_node_mask(grid, f1)
            gap = np.abs(u.samples[mask] - model.u0.samples[mask]).max() if mask.any() else 0.0
            if gap > tol:
                mism_len += f1.total_measure()
        extra = model.alpha * mism_len
    return EnergyBreakdown(base.bulk, base.surface, extra)
