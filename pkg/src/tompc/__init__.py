"""Task-oriented MPC toolkit: ADMM-split trajectory optimization with hard
collision constraints for torque-controlled manipulators, plus a closed-loop
simulation harness."""

from .geometry import Pose, exp_pose, log_pose, pose_diff
from .robot import (RobotModel, load_model, forward_kinematics,
                    frame_jacobian, mass_matrix, inverse_dynamics,
                    forward_dynamics, null_space_projector, step,
                    step_derivatives)
from .collision import CollisionWorld, Obstacle, DistanceResult
from .interaction import InteractionModel, contact_wrench, wrench_partials
from .costs import TaskWeights, CycleReferences, TaskObjective, goal_relaxation
from .solvers import (QPProblem, QPSolution, solve_qp, clamp_controls,
                      OCProblem, ProximalTerm, DDPSolution, ddp_solve)
from .planner import Planner, PlannerConfig, PlannerOutput, ProjectionMap
from .scenarios import Scenario
from .simulate import SimLog, simulate, compute_metrics, run_suite

__version__ = "0.1.0"

__all__ = [
    "Pose", "exp_pose", "log_pose", "pose_diff",
    "RobotModel", "load_model", "forward_kinematics", "frame_jacobian",
    "mass_matrix", "inverse_dynamics", "forward_dynamics",
    "null_space_projector", "step", "step_derivatives",
    "CollisionWorld", "Obstacle", "DistanceResult",
    "InteractionModel", "contact_wrench", "wrench_partials",
    "TaskWeights", "CycleReferences", "TaskObjective", "goal_relaxation",
    "QPProblem", "QPSolution", "solve_qp", "clamp_controls",
    "OCProblem", "ProximalTerm", "DDPSolution", "ddp_solve",
    "Planner", "PlannerConfig", "PlannerOutput", "ProjectionMap",
    "Scenario", "SimLog", "simulate", "compute_metrics", "run_suite",
]
