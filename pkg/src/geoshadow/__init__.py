"""Shadowing of slow-space curves by symbol-coded slow-fast trajectories."""

from .errors import (ConfigurationError, DomainError, EscapeError, GeoShadowError, InputError,
                     NumericalError, PreconditionError, RangeError, ShadowingFailure)
from .geometry import (Box, GuidingFieldSet, GuidingHamiltonian, example_system, guiding_field,
                       hamiltonian_field, polynomial_hamiltonian, quadratic_system)
from .planner import (CurveSpec, GuidingPath, ShadowResult, discretize_curve, guiding_path,
                      land_near, reparameterize, shadow_curve, synthesize_segment_code)
from .spanning import bound_D, check_A3, check_A3_region, cone_decompose, decompose, select_cone_basis
from .symbolic import (Code, Constants, FastStateModel, ReducedMapParams, constants,
                       coupling_for_norm, fast_state, step, trajectory)

__version__ = "0.1.0"
