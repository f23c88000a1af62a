"""Numerical laboratory for rigidity and Korn inequalities of
incompatible matrix fields: staggered-grid calculus, Hodge splits,
critical div-curl solves, Whitney covers, and empirical constant
estimation for fields whose incompatibility is a concentrated measure.
"""

__version__ = "0.1.0"

from .errors import (
    ConsistencyError,
    ConvergenceError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    PlacementError,
    ResolutionError,
    RigidlabError,
    ShapeError,
    SolvabilityError,
)
from .fields import (
    CELL,
    STAGGERED,
    IncompatibilityMeasure,
    NormSpec,
    PointCharge,
    Segment,
    TensorField,
    VectorField,
    critical_exponent,
    lp_norm,
    staggered_inner,
    total_variation,
)
from .grids import Domain, Grid
from .operators import (
    Stencil,
    circulation,
    curl_edge_data,
    curl_general,
    dislocation_density_3d,
    div_rows,
    extend_reflect_mollify,
    grad,
    levi_civita,
)
from .poisson import (
    DivCurlProblem,
    NeumannProblem,
    SolveInfo,
    solve_div_curl,
    solve_neumann,
)
from .hodge import HodgeSplit, divcurl_ratio, hodge_split
from .covering import (
    PartitionOfUnity,
    PoincareResult,
    WhitneyCover,
    WhitneyCube,
    glue_rotations,
    partition_of_unity,
    weighted_poincare,
    whitney_cover,
)
from .rigidity import (
    FitInfo,
    InequalityReport,
    PipelineResult,
    dist_SO,
    dist_SO_field,
    estimate_constant,
    fit_antisymmetric,
    fit_rotation,
    korn_report,
    project_SO,
    rigidity_pipeline,
    rigidity_report,
    rotation_2d,
    rotation_from_axis_angle,
)
from .generators import (
    CaseSpec,
    build_corpus,
    consistency_check,
    gen_compatible,
    gen_loop_dislocation_3d,
    gen_mixture,
    gen_point_dislocation_2d,
    gen_rotation,
    gen_screw_dislocation_3d,
    generate,
    scale_case,
)
from .io import load_field, save_field
