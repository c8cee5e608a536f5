"""Trace-norm regularized tensor completion and factor interpretation."""

from .factorize import (
    CpModel,
    CpOptions,
    EmptyModelError,
    TuckerModel,
    combine_factors,
    cp_als,
    cp_to_tucker,
    detect_ranks,
    extract_tucker,
    interpret,
    reconstruct,
)
from .io_formats import FormatError
from .solvers import (
    Diagnostics,
    GapRecord,
    Solution,
    SolverConfig,
    SolverConfigError,
    solve,
    solve_as_matrix,
    solve_constraint,
    solve_mixture,
)
from .spectral_ops import SvdError, SvdFactors, project_spectral_ball, prox_trace, svd_thin
from .tensor_core import DenseTensor, ObservationSet, ShapeError, fold, mode_product, observe, scatter, unfold
from .workbench import SynthSpec, gen_lowrank, generalization_error, run_sweep, sample_mask

__version__ = "0.1.0"
