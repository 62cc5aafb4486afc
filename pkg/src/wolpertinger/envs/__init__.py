from .base import Environment, EnvStep
from .cartpole import CartPoleSwingUp, force_action_set
from .puddle import PuddleWorld, benchmark_map, dp_optimal_return, generate_puddle_map
from .recommender import RecommenderSim, synth_recommender

__all__ = [
    "Environment",
    "EnvStep",
    "CartPoleSwingUp",
    "force_action_set",
    "PuddleWorld",
    "benchmark_map",
    "dp_optimal_return",
    "generate_puddle_map",
    "RecommenderSim",
    "synth_recommender",
]
