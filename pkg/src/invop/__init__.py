"""Composable inverse-problem toolkit: matrix-free operators with automatic
simplification, cost functionals with gradients and proximity operators, and
iterative solvers."""

__version__ = "0.1.0"

from ._accel import NUMBA_AVAILABLE, USE_NUMBA
from .operators import (
    Kind,
    LinOp,
    Map,
    NormEstimate,
    add,
    adjoint,
    compose,
    estimate_norm,
    power,
    scale,
    to_dense,
)
from .linops import Conv, Diag, Downsample, EWSqrt, Grad, Hess, Identity, SelectorPatch, SumPatches
from .costs import (
    INF,
    CostKind,
    GoodRoughness,
    Hyperbolic,
    L2Residual,
    MixNorm21,
    MixNormSchatt1,
    NonNegIndicator,
    compose_cost,
    conjugate_gradient,
    scale_cost,
    sum_cost,
)
from .tensor import dft, elementwise, idft, inner, read_tensor, write_tensor
from .solvers import (
    CostRelative,
    IterationLog,
    SolverConfig,
    SplitProblem,
    StepRelative,
    compute_snr,
    run,
    run_admm,
    run_fbs,
    run_primal_dual,
    run_vmlmb,
)
from .config import build_cost, build_operator
