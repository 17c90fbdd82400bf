"""Regularized B0 field-map and water/fat estimation from multi-echo, multi-coil images."""

from .initialize import SweepConfig, init_pwls, init_sweep, init_two_echo
from .likelihood import cost_phi, cost_psi, curvatures, grad_phi, grad_psi, ml_images
from .optimizer import IterationLog, NumericalError, Problem, SolverConfig, ncg_mls, qm_baseline, solve
from .pipeline import Estimate, estimate, setup
from .regularizer import DifferenceOperator
from .signal import (
    DegenerateBasisError,
    FatModel,
    PairTermCache,
    SignalBasis,
    build_gamma,
    forward_model,
    precompute_cache,
)
from .sparse import FactorizationError, SparseSPD, TriangularFactor, assemble_hessian, ichol, solve_factor
from .waterfat import ComponentImages, separate

__version__ = "0.1.0"
