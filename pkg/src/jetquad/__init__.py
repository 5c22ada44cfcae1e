"""jetquad: explicit solution families for evolution PDEs that admit
differential constraints, integrated by quadratures through solvable
structures of vector fields on the constrained jet chart."""

from .expressions import (
    ParseError,
    Symbol,
    SymbolTable,
    Verdict,
    ZeroTestPolicy,
    diff,
    eval_at,
    is_zero,
    normalize,
    parse,
    pretty,
    substitute,
)
from .jets import EvolutionSystem, TruncationOverflowError, bar_Dt, bar_Dx, commutator_check
from .constraints import (
    ConstraintSet,
    RestrictedPair,
    Submanifold,
    build_submanifold,
    check_compatibility,
    prolong_vertical_field,
    restrict,
    restricted_pair,
)
from .fields import (
    SolvableStructure,
    VectorField,
    in_span,
    is_abelian,
    lie_bracket,
    verify_solvable_structure,
)
from .forms import (
    OneForm,
    TwoForm,
    VolumeForm,
    beta,
    closed_mod,
    cramer_forms,
    denominator,
    exterior_derivative,
    wedge,
)
from .reduction import (
    NotClosedError,
    NumericPotential,
    ReductionChain,
    abelian_shortcut,
    descend,
    integrate_closed,
    solve_level_set,
)
from .checks import SamplePlan, constraint_residual, residual, spot_check
from .problem import ProblemFile, Workspace, bundled_path, format_problem, instantiate, load, loads

__version__ = "0.1.0"

__all__ = [
    "ParseError", "Symbol", "SymbolTable", "Verdict", "ZeroTestPolicy",
    "diff", "eval_at", "is_zero", "normalize", "parse", "pretty", "substitute",
    "EvolutionSystem", "TruncationOverflowError", "bar_Dt", "bar_Dx", "commutator_check",
    "ConstraintSet", "RestrictedPair", "Submanifold", "build_submanifold",
    "check_compatibility", "prolong_vertical_field", "restrict", "restricted_pair",
    "SolvableStructure", "VectorField", "in_span", "is_abelian", "lie_bracket",
    "verify_solvable_structure",
    "OneForm", "TwoForm", "VolumeForm", "beta", "closed_mod", "cramer_forms",
    "denominator", "exterior_derivative", "wedge",
    "NotClosedError", "NumericPotential", "ReductionChain", "abelian_shortcut",
    "descend", "integrate_closed", "solve_level_set",
    "SamplePlan", "constraint_residual", "residual", "spot_check",
    "ProblemFile", "Workspace", "bundled_path", "format_problem", "instantiate",
    "load", "loads",
]
