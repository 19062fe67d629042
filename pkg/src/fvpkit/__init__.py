"""Final value problems u' + Au = f, u(T) = u_T for V-coercive operators.

Finite-dimensional (spectral or matrix) realizations of a Gelfand triple,
the analytic semigroup e^{-tA} and its inverse, Duhamel and time-stepping
forward solvers, the compatibility test u_T - y_f ∈ D(e^{TA}), and the
Neumann heat model.
"""

__version__ = "0.1.0"

from .errors import (AccuracyWarning, IncompatibleDataError, SemigroupOverflowError,
                     ValidationError)
from .triple import (CoerciveOperator, Constants, GelfandTriple, estimate_constants,
                     verify_coercivity)
from .semigroup import (DIVERGING, IN_DOMAIN, INCONCLUSIVE, SemigroupEvaluator,
                        domain_chain_probe, height_profile, logconv_criterion)
from .source import SourceTerm
from .trajectory import SOBOLEV_AUDIT, Trajectory
from .duhamel import (compute_yf, solve_forward_duhamel, solve_forward_stepper,
                      verify_gronwall_bound)
from .fvp import (CompatibilityReport, FvpData, apply_parabolic, check_compatibility,
                  homeomorphism_roundtrip, recover_initial_state, solve_fvp,
                  stability_constant, y_norm)
from .neumann import (Interval, NeumannModel, Rectangle, build_model, check_neumann_bc,
                      holder_gate, instability_experiment, weyl_check)

__all__ = [
    "AccuracyWarning", "IncompatibleDataError", "SemigroupOverflowError", "ValidationError",
    "CoerciveOperator", "Constants", "GelfandTriple", "estimate_constants", "verify_coercivity",
    "DIVERGING", "IN_DOMAIN", "INCONCLUSIVE", "SemigroupEvaluator", "domain_chain_probe",
    "height_profile", "logconv_criterion", "SourceTerm", "SOBOLEV_AUDIT", "Trajectory",
    "compute_yf", "solve_forward_duhamel", "solve_forward_stepper", "verify_gronwall_bound",
    "CompatibilityReport", "FvpData", "apply_parabolic", "check_compatibility",
    "homeomorphism_roundtrip", "recover_initial_state", "solve_fvp", "stability_constant",
    "y_norm", "Interval", "NeumannModel", "Rectangle", "build_model", "check_neumann_bc",
    "holder_gate", "instability_experiment", "weyl_check",
]
