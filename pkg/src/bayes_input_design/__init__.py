"""Bayesian input design for parameter-affine linear systems.

Classical and prior-averaged (ensemble) design of bounded inputs, exact
discretization, Gaussian posterior updates and Pontryagin diagnostics.
"""

__version__ = "0.1.0"

from .bayes import (GaussianBelief, PosteriorUpdate, eopt_direction, noise_precision, posterior_update,
                    simulate_measurement, trace_objective)
from .errors import (ConfigError, DegenerateEigenvalue, DesignError, DimensionMismatch, InvalidSystem,
                     NonFiniteCost, NonFiniteMatrix, SingularCovariance, SingularGram, UnsupportedDimension)
from .objective import (AtomicPrior, DesignContext, DesignProblem, atomize_prior, cost_classical,
                        cost_ensemble_atoms, cost_ensemble_exact, gradient, make_context)
from .optimizer import OptimizeResult, OptimizerConfig, initial_guess, solve
from .pmp import (PmpReport, classify_arcs, gram_matrices, integrate_covector, legendre_clebsch_check,
                  pmp_report, singular_feedback, switching_functions)
from .sysmodel import (ControlGrid, Discretization, LinearParamSystem, PsiFamily, augment_ensemble_system,
                       compute_psi_family, compute_Y, discretize, simulate_trajectory)
