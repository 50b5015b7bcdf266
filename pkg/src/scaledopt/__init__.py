"""Stochastic gradient methods with momentum-updated preconditioners.

Library layout:

* :mod:`scaledopt.linalg`      preconditioner types, P-norms, eigensolvers
* :mod:`scaledopt.data`        datasets, LIBSVM I/O, seeded randomness
* :mod:`scaledopt.objective`   logistic regression with curvature oracles
* :mod:`scaledopt.precond`     momentum preconditioner updates
* :mod:`scaledopt.adaptive`    step-size and momentum-coefficient rules
* :mod:`scaledopt.optim`       the four optimizers and their traces
* :mod:`scaledopt.diagnostics` numerical verification of the scaling theory
* :mod:`scaledopt.config`      JSON run configuration
* :mod:`scaledopt.cli`         run / grid / sweep-a / spectrum / plotdata
"""

from .adaptive import (
    BETA_GAP,
    GOLDEN_RATIO,
    L_FLOOR,
    TheoryParams,
    adaptive_beta,
    kappa_chi,
    local_lipschitz,
    lsvrg_step_size,
    scaled_sgd_step_bound,
    series_beta,
)
from .data import (
    Dataset,
    SeededRng,
    apply_feature_scaling,
    derive_seed,
    generate_synthetic,
    parse_libsvm,
    serialize_libsvm,
)
from .diagnostics import (
    InexactnessReport,
    RateSummary,
    descent_residual,
    harmonic_average,
    inexactness,
    variance_penalty_check,
)
from .linalg import (
    EPS_FLOOR,
    DenseSPDPreconditioner,
    DiagonalPreconditioner,
    apply_inverse,
    dual_norm_sq,
    eig_sym,
    norm_sq,
    scaled_hessian_spectrum,
)
from .objective import DENSE_HESSIAN_CAP, LogisticProblem
from .optim import (
    ALGORITHMS,
    AlgoConfig,
    BetaSchedule,
    EtaSchedule,
    Optimizer,
    RunResult,
    TraceRecord,
    brent_line_search,
    run,
)
from .precond import (
    KINDS,
    PreconditionerState,
    dense_step,
    hutchinson_step,
    momentum_update,
    truncate_positive,
    update_term,
)

__version__ = "0.1.0"
