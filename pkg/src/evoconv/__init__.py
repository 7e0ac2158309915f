"""evoconv: evolutionary equations on exponentially weighted grids.

A small numerical library plus CLI for equations (d0 M + A) u = f,
where M is a causal space-time coefficient operator and A a monotone
spatial operator, together with experiment drivers that measure weak
convergence of solutions under oscillating, convolving or
time-modulated coefficient ladders.
"""

from .timeaxis import (
    TimeGrid,
    TimeSignal,
    SpectralSignal,
    weighted_inner_product,
    weighted_norm,
    apply_d0,
    apply_d0_inverse,
    fourier_laplace,
    inverse_fourier_laplace,
    truncate_before,
    time_shift,
    operator_norm,
)
from .space1d import (
    SpaceGrid,
    BlockOperatorA,
    BlockSpace,
    Field,
    assemble_block_A,
    resolvent_A,
    project_out_mean,
    field_inner,
    field_norm,
)
from .matlaw import (
    MaterialLaw,
    SpaceMul,
    Oscillated,
    SpaceOperator,
    TimeMul,
    SpaceTimeMul,
    TimeConvolution,
    Hardy,
    D0Inverse,
    Sum,
    Product,
    Scaled,
    BlockDiag,
    identity,
    space_mul,
    oscillated,
    indicator,
    time_shift_law,
    commutator_with_d0,
    check_causality,
    estimate_positivity,
    neumann_inverse,
    weak_limit_coefficient,
    law_operator_norm,
    load_kernel_file,
)
from .evosolve import (
    Problem,
    SolveReport,
    solve,
    lattice_norm,
    continuity_bound,
    verify_continuity_estimate,
)

__version__ = "0.1.0"
