"""Causal discovery driven subgoal hierarchies for goal-conditioned RL."""
from .env import ChangeKind, EnvContract, EnvVarSchema, Subgoal, VarKind, goal_reward
from .graphs import CausalGraph, shd, sid
from .scm import InterventionDataset, ScmHyper, ScmParams, discover
from .hrl import HrlHyper, SubgoalHierarchy
from .driver import DriverSettings, candidate_controllables, run_adaptation, run_pretraining
from .worlds import ChainCraft, HiddenVars, MiniCraft, make_world

__version__ = "0.1.0"
