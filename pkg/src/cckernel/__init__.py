"""Coordinate-change spline kernels for regularized impulse response estimation."""

from .errors import DegenerateGridError, DomainError, SystemDefinitionError, TuningError
from .estimator import (
    Dataset,
    DiracImpulse,
    EstimateModel,
    FunctionalInput,
    ImpulseResponseRegressor,
    basis_function,
    fit_model,
    output_gram,
    solve_coefficients,
)
from .experiment import (
    CellSpec,
    ExperimentConfig,
    RunResult,
    export_result,
    paper_sec7_config,
    run_experiment,
    simulate_output,
)
from .kernels import (
    CoordinateChangeKernel,
    FirstOrderSplineKernel,
    GramFactorization,
    TCKernel,
    gram,
    gram_inverse_closed_form,
    gram_log_det_closed_form,
    kernel_eval,
    kernel_from_dict,
    validate_grid,
)
from .lti import (
    ExponentialBound,
    PartialFractionForm,
    RationalTransferFunction,
    annihilation_order,
    exponential_bound,
    impulse_response_eval,
    partial_fraction_decompose,
)
from .maxent import IncrementProcess, build_process, sample
from .spectral import (
    MINOR,
    PRINCIPAL,
    DecayMeasure,
    MultiPoleSpectralBasis,
    coordinate_inverse,
    eigen_relation_residual,
    lambert_w,
    orthonormality_defect,
    spline_eigenfunction,
    spline_eigenvalue,
    truncation_error_curve,
)
from .tuning import (
    FAMILIES,
    KernelFamily,
    OptimizerConfig,
    TCKernelFamily,
    TuningResult,
    TwoPoleFamily,
    empirical_bayes_tune,
    neg_log_marginal_likelihood,
    oracle_mse,
    oracle_tune,
    wilcoxon_rank_sum,
)

__version__ = "0.1.0"
