"""Constrained motion planning for planar arms with latent Gaussian sampling regions."""

from .config import PlannerConfig
from .constraints import (ConstraintSet, FunctionConstraint, LinearConstraint, StackedConstraint,
                          TaskSpaceConstraint, TsrConstraint, Unconstrained, stack)
from .environment import Environment, Scenario, load_scenario, save_scenario
from .errors import GoalSamplingError, NoSequenceError, NumericalError, PlanningError, ScenarioError
from .kinematics import ArmModel, PlanarPose, forward_kinematics, jacobian
from .planner import PlanRequest, PlanResult, baseline_plan, plan, plan_with_codebook
from .projection import ProjectionParams, ProjectionResult, project
from .regions import Codebook, CholeskyDecoder, GaussianParams, OptimizerParams, fit_codebook, update_distribution
from .sampling import GmmSampler, RegionSequence, beam_search, build_gmm, heuristic_scorer

__version__ = "0.1.0"
