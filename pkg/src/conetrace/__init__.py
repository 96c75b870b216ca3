"""conetrace: spectral analysis of 1-D cone differential operators.

Core objects: cone operators x^{-m} sum a_k(x) (xD_x)^k on (0, 1] with a
regular-singular tip at x = 0, their boundary spectra and singular-function
spaces, the scaling action on domains, closed extensions picked by
finite-dimensional subspaces, and numerically computed eigenvalues, resolvent
traces, and large-parameter trace expansions.
"""

__version__ = "0.1.0"

from .operator_core import (
    ConeOperator,
    FrozenOperator,
    LogPowerFunction,
    apply_symbolic,
    build_operator,
    check_parameter_ellipticity,
    conormal_symbol,
    has_x_independent_coefficients,
    model_operator,
    taylor_component,
)
from .mellin_laurent import (
    LaurentExpansion,
    laurent_add,
    laurent_inverse_of_polynomial,
    laurent_mul,
    mellin_cutoff,
    shift_argument,
    singular_part,
)
from .indicial import (
    IndicialRoot,
    SingularBasis,
    boundary_spectrum,
    max_domain_dimension,
    strip_sigma,
    wedge_singular_basis,
)
from .theta_map import ThetaTail, e_step, theta_inverse, theta_matrix
from .domain_geometry import (
    DomainSpec,
    KappaData,
    canonical_basis,
    domain_from_columns,
    domain_max,
    domain_min,
    friedrichs_domain,
    generator,
    is_stationary,
    kappa_apply,
    kappa_matrix,
    stationary_domains,
)
from .ode_engine import (
    FrobeniusSolution,
    Numerics,
    SpectralProblem,
    TraceSample,
    characteristic_det,
    eigen_trace,
    eigenvalues,
    frobenius_basis,
    green_trace,
    propagate,
)
from .asymptotics import (
    FitResult,
    RaySamples,
    compare_domains,
    detect_logs,
    fit_expansion,
    fit_heat,
    heat_trace,
    sample_ray,
    zeta_report,
)
