"""Numerical toolkit for Carnot-Caratheodory (sub-Finsler) distances.

Integrates control systems gamma' = f(gamma) u(t) defined by Lipschitz
frame structures and continuously varying norms, estimates CC distances and
geodesics by two independent upper-bound constructions, and runs empirical
convergence experiments on the built-in worked examples.
"""

from .core import (BoxExitError, CCError, ChartBox, EvaluationError,
                   PiecewiseConstantControl, StructureFamily, Trajectory,
                   VaryingNorm, VectorFieldStructure, check_norm_axioms,
                   validate_structure)
from .flow import FlowWord, concat_control, endpoint, flow_composition, gronwall_bound
from .functionals import (FiberSolveResult, energy, fiber_length, fiber_metric,
                          length, reparametrize_constant_speed)
from .distance import (BallResult, DistanceEstimate, GridGraphSpec, OptOptions,
                       cc_distance_graph, cc_distance_opt, geodesic, metric_ball,
                       polygonal_length)
from .topology import (DegreeReport, bracket_span_rank, essential_openness_probe,
                       openness_constants, winding_number)
from . import convergence, scenarios

__version__ = "0.1.0"
