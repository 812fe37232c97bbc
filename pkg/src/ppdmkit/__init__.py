"""Recover room walls and a measurement trajectory from point-to-plane distances."""
from .errors import DegenerateCombinationError, InvalidInputError, NoPolytopeError, UnderdeterminedError
from .geometry import (Plane, RigidMotion, RoomTrajectory, Verdict, affine_dimension, apply_rigid_motion, distance,
                       is_congruent, room_vertices)
from .ppdm import PPDM, add_noise, build_ppdm, complete, denoise, numerical_rank
from .ambiguity import (ClassTag, EquivalencePair, NormalTransform, nullspace_residual, reflection_class_generator,
                        row_dependence_class_generator, transform_class_generator, uniqueness_verdict,
                        verify_equivalence)
from .solver import (Estimate, FixedPlane, Gauge, SolverConfig, align_to_reference, cost_function, refine, solve,
                     spectral_init)
from .experiments import (SweepRow, SweepSpec, default_sweep_spec, linear_fit, load_preset, noise_sweep, preset_names,
                          room_error, waypoint_error)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
