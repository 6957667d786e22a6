"""Staggered-grid solver for the quasilinear Maxwell system with absorbing,
field-dependent boundary conditions, plus drivers that measure energy,
dissipation, decay and the associated empirical constants."""

from .errors import (AbsdError, ConfigError, DegenerateSeries, InsufficientHistory,
                     NonConvergence, ProjectionError, ZeroDenominator, ZeroDissipation)
from .geometry import BoundaryFace, StaggeredGrid, build_grid, cross_normal, tangential_project
from .materials import (KerrLaw, LinearLaw, MaterialModel, PolynomialLaw, Profile,
                        check_nontrapping, check_positivity, eval_eps, eval_eps_d, eval_lambda,
                        eval_lambda_d, eval_mu, eval_mu_d, invert_constitutive)
from .operators import FieldSet

__version__ = "0.1.0"
