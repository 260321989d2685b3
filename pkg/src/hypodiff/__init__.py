"""Hypoelliptic Kolmogorov kernels, degenerate-SDE samplers, and diagnostics."""

from .bumps import SmoothBump, SpaceTimeFunction, lp_norm
from .green import (
    KernelTuple,
    apply_truncated,
    green_apply,
    green_first_derivative,
    green_second_derivative,
    lp_ratio,
    lp_ratio_profile,
    singular_kernel,
    sup_bound_check,
    truncated_kernel,
)
from .group import GroupPoint, StructuralMatrix, kolmogorov_matrix, validate_structure
from .kernel import (
    CovarianceProfile,
    TransitionKernel,
    envelope_constants,
    reference_covariance,
)
from .quadrature import QuadratureSpec
from .simulate import (
    CoefficientField,
    Ensemble,
    RadiusFunction,
    Trajectory,
    euler_simulate,
    exact_sample,
    field_example_chain,
    field_example_sum_drift,
    field_example_two_block,
    green_functional,
    law_distance,
    linear_field,
    localization_times,
    martingale_residual,
    modulus_of_continuity,
)
from .transform import (
    BsecondMap,
    ScalarField,
    Transform,
    bsecond_catalog,
    make_transform,
    pad_dimensions,
    smooth_cutoff,
    zy_reduce,
)
from .twosample import energy_distance, energy_permutation_test

__version__ = "0.1.0"

__all__ = [
    "BsecondMap",
    "CoefficientField",
    "CovarianceProfile",
    "Ensemble",
    "GroupPoint",
    "KernelTuple",
    "QuadratureSpec",
    "RadiusFunction",
    "ScalarField",
    "SmoothBump",
    "SpaceTimeFunction",
    "StructuralMatrix",
    "Trajectory",
    "Transform",
    "TransitionKernel",
    "apply_truncated",
    "bsecond_catalog",
    "energy_distance",
    "energy_permutation_test",
    "envelope_constants",
    "euler_simulate",
    "exact_sample",
    "field_example_chain",
    "field_example_sum_drift",
    "field_example_two_block",
    "green_apply",
    "green_first_derivative",
    "green_functional",
    "green_second_derivative",
    "kolmogorov_matrix",
    "law_distance",
    "linear_field",
    "localization_times",
    "lp_norm",
    "lp_ratio",
    "lp_ratio_profile",
    "make_transform",
    "martingale_residual",
    "modulus_of_continuity",
    "pad_dimensions",
    "reference_covariance",
    "singular_kernel",
    "smooth_cutoff",
    "sup_bound_check",
    "truncated_kernel",
    "validate_structure",
    "zy_reduce",
]
