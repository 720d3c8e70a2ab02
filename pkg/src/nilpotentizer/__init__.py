"""Tangent-cone toolkit for weighted polynomial vector-field structures.

Computes graded nilpotent approximations of bracket-generating vector-field
systems: free nilpotent Lie algebras, dilated kernel limits on Grassmannians,
homogeneous-space cones with their horizontal metrics, and numerical
Gromov-Hausdorff convergence studies.
"""

__version__ = "0.1.0"

from .cone import ConePoint, RxReport, TangentCone, build_cone, compute_rx
from .grassmann import (
    ApproachPath,
    Subspace,
    conjugate_subspace,
    dilate_subspace,
    gap_distance,
    graded_limit_fixed,
    kernel,
    limit_along_path,
)
from .liealg import (
    GradedLieAlgebra,
    LieVector,
    adjoint_conjugate,
    bch_product,
    bracket,
    dilate,
    free_nilpotent,
    is_subalgebra,
    quasi_norm,
    validate_algebra,
)
from .metrics import (
    GroupoidPoint,
    SolverOptions,
    cc_distance_cone,
    cc_distance_manifold,
    comparison_ratio_scan,
    quasi_norm_element,
)
from .gh import ConvergenceTable, PointedNet, convergence_study, sample_ball_cone
from .poly import Polynomial, parse_polynomial
from .scenarios import ScenarioConfig, builtin, builtin_names, parse_config
from .vfields import (
    SubRiemannianStructure,
    VectorField,
    build_natural_map,
    flow,
    hormander_check,
    natural_at,
    natural_t,
)

__all__ = [
    "ApproachPath",
    "ConePoint",
    "ConvergenceTable",
    "GradedLieAlgebra",
    "GroupoidPoint",
    "LieVector",
    "PointedNet",
    "Polynomial",
    "RxReport",
    "ScenarioConfig",
    "SolverOptions",
    "SubRiemannianStructure",
    "Subspace",
    "TangentCone",
    "VectorField",
    "adjoint_conjugate",
    "bch_product",
    "bracket",
    "build_cone",
    "build_natural_map",
    "builtin",
    "builtin_names",
    "cc_distance_cone",
    "cc_distance_manifold",
    "comparison_ratio_scan",
    "compute_rx",
    "conjugate_subspace",
    "convergence_study",
    "dilate",
    "dilate_subspace",
    "flow",
    "free_nilpotent",
    "gap_distance",
    "graded_limit_fixed",
    "hormander_check",
    "is_subalgebra",
    "kernel",
    "limit_along_path",
    "natural_at",
    "natural_t",
    "parse_config",
    "parse_polynomial",
    "quasi_norm",
    "quasi_norm_element",
    "sample_ball_cone",
    "validate_algebra",
    "__version__",
]
