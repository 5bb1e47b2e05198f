"""Numerical pseudo-Hermitian geometry: dbar_b-energy calculus for maps from
strictly pseudoconvex CR manifolds into Kahler manifolds."""

import jax

jax.config.update("jax_enable_x64", True)

from .derivatives import Differentiator, AD, fd  # noqa: E402
from .phmodel import (  # noqa: E402
    ChartError,
    ConformalFactor,
    DegenerateFrameError,
    Point,
    PseudoHermitianModel,
    conformal_change,
    connection_from_brackets,
    make_heisenberg,
    make_sphere,
    webster_curvature,
)
from .kahler import (  # noqa: E402
    DomainError,
    KahlerTarget,
    NegativityVerdict,
    make_bergman_ball,
    make_flat,
    rank_condition,
    sample_negativity_order_k,
    sample_strong_negativity,
)
from .maps import SmoothMapRep, anti_cr, constant_map, cr_inclusion, make_map, perturbed_cr, random_polynomial  # noqa: E402
from .mapcalc import UnsupportedError, classify, evaluate, jet, pairing, tension  # noqa: E402
from .verify import (  # noqa: E402
    VerificationReport,
    check_commutators,
    check_conformal_invariance,
    check_curvature_rearrangement,
    check_divergences,
    check_trace_identities,
)
from .integrate import QuadratureRule, energy, make_rule, positivity_check, siu_identity_residuals  # noqa: E402
from .flow import FlowSettings, FlowTrace, MapAnsatz, discrete_energy_and_gradient, minimize  # noqa: E402

__all__ = [
    "AD",
    "ChartError",
    "ConformalFactor",
    "DegenerateFrameError",
    "Differentiator",
    "DomainError",
    "FlowSettings",
    "FlowTrace",
    "KahlerTarget",
    "MapAnsatz",
    "NegativityVerdict",
    "Point",
    "PseudoHermitianModel",
    "QuadratureRule",
    "SmoothMapRep",
    "UnsupportedError",
    "VerificationReport",
    "anti_cr",
    "check_commutators",
    "check_conformal_invariance",
    "check_curvature_rearrangement",
    "check_divergences",
    "check_trace_identities",
    "classify",
    "conformal_change",
    "connection_from_brackets",
    "constant_map",
    "cr_inclusion",
    "discrete_energy_and_gradient",
    "energy",
    "evaluate",
    "fd",
    "jet",
    "make_bergman_ball",
    "make_flat",
    "make_heisenberg",
    "make_map",
    "make_rule",
    "make_sphere",
    "minimize",
    "pairing",
    "perturbed_cr",
    "positivity_check",
    "random_polynomial",
    "rank_condition",
    "sample_negativity_order_k",
    "sample_strong_negativity",
    "siu_identity_residuals",
    "tension",
    "webster_curvature",
]

__version__ = "0.1.0"
