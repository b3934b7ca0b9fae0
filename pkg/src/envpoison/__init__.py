"""Online environment poisoning of tabular reinforcement learners.

An attacker sitting between environment and victim rewrites rewards and
next states so that the victim's greedy policy becomes a chosen target,
while redirected transitions stay inside the true reachable sets.
"""

from .agent import AgentConfig, QLearningAgent, SarsaAgent, agent_update, greedy_policy
from .attacker import AttackerState, PoisonedSample, poison_sample, update_delta, update_qvalue, update_reward
from .config import ExperimentConfig, load_config
from .harness import ExperimentResult, TrialResult, ablation_rho_delta, run_experiment, run_trial
from .maze import MazeSpec, build_maze, default_maze_spec
from .mdp import TabularMdp, apply_delta, exact_policy_q, reachable_sets, sample_transition
from .schedules import Constant, Decay, Ramp, Schedules

__version__ = "0.1.0"
