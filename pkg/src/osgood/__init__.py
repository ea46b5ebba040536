"""Blow-up certificates for semilinear heat equations on graphs and kernel spaces.

The equation is u' = -Lu + f(u) with L a nonnegative self-adjoint generator
of a sub-Markovian semigroup S(t) and f a convex reaction satisfying the
Osgood condition. The package computes S(t), the Osgood functional
F(t) = int_t^inf ds / f(s) and its inverse, searches for pairs (T, G) with
mean_G S(T) a > F^{-1}(T), and integrates the mild formulation to check
such certificates against simulated blow-up times.
"""

__version__ = "0.1.0"

from .blowup import (BlowupCertificate, CertificateRejected, CriterionVerdict, criterion_graph,  # noqa: E402
                     criterion_mms, on_diagonal_fit, search_certificate, verify_certificate)
from .graph import WeightedGraph, fit_volume_growth, graph_from_spec, load_graph  # noqa: E402
from .kernel_models import KernelModel, KernelSemigroup, validate_axioms  # noqa: E402
from .mild_solver import SolutionTrace, StepControls, check_residual, diagnostics, solve  # noqa: E402
from .semigroup import SemigroupOperator, check_jensen, heat_kernel  # noqa: E402
from .source_term import ExpMinusOne, Power, PowerOverExp, SourceTerm, Tabulated  # noqa: E402

__all__ = [
    "BlowupCertificate", "CertificateRejected", "CriterionVerdict", "criterion_graph", "criterion_mms",
    "on_diagonal_fit", "search_certificate", "verify_certificate", "WeightedGraph", "fit_volume_growth",
    "graph_from_spec", "load_graph", "KernelModel", "KernelSemigroup", "validate_axioms", "SolutionTrace",
    "StepControls", "check_residual", "diagnostics", "solve", "SemigroupOperator", "check_jensen",
    "heat_kernel", "ExpMinusOne", "Power", "PowerOverExp", "SourceTerm", "Tabulated",
]
