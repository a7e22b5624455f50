"""Runtime correction of policy joint actions into collision-free trajectories."""

from .arm_model import ArmModel, JointState, default_arm, forward_kinematics, jacobian, load_arm
from .geometry import Scene, clearance, load_scene, min_robot_env_distance, min_self_distance
from .harness import ScenarioConfig, compare, load_config, n_sweep, run_experiment
from .ikinqp import CorrectedTrajectory, Corrector, CorrectorParams, IdentityCorrector, correct
from .policies import Action, Observation, make_greedy, make_random, make_replay
from .qp_core import QpProblem, QpStatus, solve_qp
from .safe_executor import ExecutorParams, FailsafeBank, Fixed, Formula, run_episode
from .sim_env import ArmEnv, ControllerGains, PlantParams

__version__ = "0.1.0"

__all__ = [
    "Action", "ArmEnv", "ArmModel", "ControllerGains", "CorrectedTrajectory", "Corrector",
    "CorrectorParams", "ExecutorParams", "FailsafeBank", "Fixed", "Formula", "IdentityCorrector",
    "JointState", "Observation", "PlantParams", "QpProblem", "QpStatus", "Scene", "ScenarioConfig",
    "clearance", "compare", "correct", "default_arm", "forward_kinematics", "jacobian", "load_arm",
    "load_config", "load_scene", "make_greedy", "make_random", "make_replay", "min_robot_env_distance",
    "min_self_distance", "n_sweep", "run_episode", "run_experiment", "solve_qp",
]
