from ._cli import RunConfig, main, parse_input, run
from ._errors import (
    DegenerateDirection,
    DegenerateScores,
    DomainError,
    InvalidStatistic,
    LevelUnreachable,
    MalformedCsv,
    MixedArity,
    NoConvergence,
    NonpositiveG,
    NotPositiveDefinite,
    OverflowGuard,
    PermSaddleError,
    SingularCovariance,
    TooLarge,
)
from ._math import SymMatrix, chi_sq_tail, cholesky, logdet, sym_sqrt
from ._model import (
    CgfValue,
    GroupDesign,
    ScoreSet,
    TiltingModel,
    cgf,
    cgf_lattice,
    group_design,
    ksample_model,
    standardize_scalar,
    twosample_model,
    whiten_multivariate,
)
from ._oracle import (
    PermutationOutcome,
    classical_statistic,
    classical_threshold,
    exact_tail,
    mc_tail,
    mc_tails,
    permutation_distribution,
)
from ._permtest import (
    PermutationTest,
    TestReport,
    ksample_test,
    observed_statistic,
    twosample_test,
)
from ._saddlepoint import (
    ConditionalContext,
    Saddlepoint,
    conditional_context,
    conditional_density,
    formal_density,
    lattice_density,
    solve_lattice,
    solve_saddlepoint,
    solve_saddlepoint_batch,
)
from ._tail import (
    DirectionSolve,
    TailResult,
    bn_tail,
    delta,
    estimate_G,
    lr_tail,
    radial_root,
    tail_probability,
)
from ._types import ModelKind, Statistic

__version__ = "0.1.0"

# these will be imported when adding ``from permsaddle import *``
__all__ = [
    "__version__",
    "CgfValue",
    "ConditionalContext",
    "DegenerateDirection",
    "DegenerateScores",
    "DirectionSolve",
    "DomainError",
    "GroupDesign",
    "InvalidStatistic",
    "LevelUnreachable",
    "MalformedCsv",
    "MixedArity",
    "ModelKind",
    "NoConvergence",
    "NonpositiveG",
    "NotPositiveDefinite",
    "OverflowGuard",
    "PermSaddleError",
    "PermutationOutcome",
    "PermutationTest",
    "RunConfig",
    "Saddlepoint",
    "ScoreSet",
    "SingularCovariance",
    "Statistic",
    "SymMatrix",
    "TailResult",
    "TestReport",
    "TiltingModel",
    "TooLarge",
    "bn_tail",
    "cgf",
    "cgf_lattice",
    "chi_sq_tail",
    "cholesky",
    "classical_statistic",
    "classical_threshold",
    "conditional_context",
    "conditional_density",
    "delta",
    "estimate_G",
    "exact_tail",
    "formal_density",
    "group_design",
    "ksample_model",
    "ksample_test",
    "lattice_density",
    "logdet",
    "lr_tail",
    "main",
    "mc_tail",
    "mc_tails",
    "observed_statistic",
    "parse_input",
    "permutation_distribution",
    "radial_root",
    "run",
    "solve_lattice",
    "solve_saddlepoint",
    "solve_saddlepoint_batch",
    "standardize_scalar",
    "sym_sqrt",
    "tail_probability",
    "twosample_model",
    "twosample_test",
    "whiten_multivariate",
]
