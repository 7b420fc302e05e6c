"""Monotone finite-difference solver for fully nonlinear elliptic
equations written in pure directional second differences, with the
cut-off regularization max(H[v], P[v] - K) = 0."""

from ._kernels import NUMBA_ENABLED, backend_name
from .directions import (DirectionSet, build_axis_directions,
                         build_decomposition_directions,
                         build_standard_directions, cutoff_P,
                         decompose_spd, hessian_to_pure)
from .lattice import (DiscreteDomain, DomainSpec, GridFunction,
                      build_discrete_domain, discrete_hessian_vector,
                      first_difference, second_difference)
from .operators import (BoundaryData, OperatorSpec, RoughField,
                        example_bellman, example_eq12,
                        example_nonuniqueness, example_poisson,
                        make_cutoff_operator, slope_hull_check)
from .solver import (BarrierError, PsiBarrier, SolveReport, SolverError,
                     build_psi0, comparison_check, residual_field,
                     residual_norms, solve, transformed_apply)
from .estimates import (EstimateReport, PowerBarrier, boundary_estimate,
                        build_power_barrier, cutoff_identity_check,
                        domination_check, estimate_report,
                        interior_second_diff_report,
                        one_sided_estimate_check)
from .harness import (StudyConfig, StudyResult, demo_eq12_config,
                      demo_poisson_config, load_config, run_demo,
                      run_h_refinement, run_k_sweep)

__version__ = "0.1.0"
