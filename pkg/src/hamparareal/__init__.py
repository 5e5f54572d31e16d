"""Parareal-in-time integrators for separable Hamiltonian systems."""
from .errors import (ConfigurationError, DegenerateProjection, IntegrationBlowup,
                     InversionFailure, PararealError, SingularityError)
from .executor import predict_cost
from .integrators import PropagatorSpec, inverse_coarse, propagate, verlet_step
from .projection import ManifoldSpec, Mode, ProjectionConfig
from .schemes import PararealConfig, PararealRun, run
from .systems import (PerturbationSchedule, SystemDefinition, build_system, eval_energy,
                      eval_grad_H, initial_state, phase_point, split)

__version__ = "0.1.0"
