"""Desk-scale numerical toolkit for Griffith-type fracture energies.

Builds piecewise-smooth approximations of displacement fields with cracks
(good/bad cube classification, rigid-affine Korn fits with exceptional
sets, mollified patching, reflection extensions across crack strips) and
phase-field sweeps of the regularized energies, with measured convergence
metrics on regular 1D/2D grids.
"""

from .cracks import FacetSet, classify_nodes, facet_measure, piecewise_strain
from .density import (
    JumpCover,
    ReflectionConfig,
    cover_jump_with_squares,
    densify,
    interface_jump,
    nitsche_extend,
    trace_distance,
)
from .energies import (
    EnergyModel,
    Schedule,
    alpha_constant,
    at_energy,
    griffith_energy,
    limit_energy,
    make_model,
)
from .grids import (
    Box,
    Grid,
    Mollifier,
    ScalarField,
    SymTensorField,
    VectorField,
    mollify,
    slice_field,
    sym_gradient,
)
from .kornfit import (
    FitResult,
    RigidAffineMap,
    affine_overlap_gap,
    exceptional_set,
    fit_rigid_affine,
    korn_poincare_check,
)
from .rough import RoughApproximant, build_tilde_u, rough_approximate, verify_rough_bounds
from .solver import SolveProblem, alternate_minimize, detect_blowup, elastic_step, phase_step

__version__ = "0.1.0"

__all__ = [
    "Box",
    "EnergyModel",
    "FacetSet",
    "FitResult",
    "Grid",
    "JumpCover",
    "Mollifier",
    "ReflectionConfig",
    "RigidAffineMap",
    "RoughApproximant",
    "ScalarField",
    "Schedule",
    "SolveProblem",
    "SymTensorField",
    "VectorField",
    "affine_overlap_gap",
    "alpha_constant",
    "alternate_minimize",
    "at_energy",
    "build_tilde_u",
    "classify_nodes",
    "cover_jump_with_squares",
    "densify",
    "detect_blowup",
    "elastic_step",
    "exceptional_set",
    "facet_measure",
    "fit_rigid_affine",
    "griffith_energy",
    "interface_jump",
    "korn_poincare_check",
    "limit_energy",
    "make_model",
    "mollify",
    "nitsche_extend",
    "phase_step",
    "piecewise_strain",
    "rough_approximate",
    "slice_field",
    "sym_gradient",
    "trace_distance",
    "verify_rough_bounds",
]
