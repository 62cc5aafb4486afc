"""Actor-critic control over large discrete action sets.

The policy reasons in a continuous action-embedding space: an actor proposes
a proto-action, a (possibly approximate) nearest-neighbor index retrieves k
candidate discrete actions, and a critic re-ranks them. Training follows the
deterministic-policy-gradient recipe with a replay buffer and target
networks. Benchmark environments, an expected-max analysis of the best-of-k
candidate model, and an experiment harness round out the package.
"""

from .action_index import (
    ActionSet,
    IndexConfig,
    IndexTier,
    NeighborResult,
    build,
    measure_recall,
)
from .ddpg import (
    Batch,
    ReplayBuffer,
    Trainer,
    TrainerConfig,
    TrainingLog,
    Transition,
    actor_update,
    critic_targets,
    critic_update,
    train,
)
from .lemma import (
    LemmaScenario,
    diminishing_returns_curve,
    expected_max,
    max_cdf,
    monte_carlo_max,
    value_cdf,
)
from .nets import (
    AdamState,
    GradientBundle,
    Mlp,
    adam_state,
    backward,
    forward,
    init_mlp,
    load_params,
    optimizer_step,
    save_params,
    soft_update,
)
from .policy import (
    ExplorationConfig,
    PolicyConfig,
    PolicyDecision,
    WolpertingerPolicy,
    make_actor,
    make_critic,
    proto_action,
)

__version__ = "0.1.0"

__all__ = [
    "ActionSet",
    "IndexConfig",
    "IndexTier",
    "NeighborResult",
    "build",
    "measure_recall",
    "Batch",
    "ReplayBuffer",
    "Trainer",
    "TrainerConfig",
    "TrainingLog",
    "Transition",
    "actor_update",
    "critic_targets",
    "critic_update",
    "train",
    "LemmaScenario",
    "diminishing_returns_curve",
    "expected_max",
    "max_cdf",
    "monte_carlo_max",
    "value_cdf",
    "AdamState",
    "GradientBundle",
    "Mlp",
    "adam_state",
    "backward",
    "forward",
    "init_mlp",
    "load_params",
    "optimizer_step",
    "save_params",
    "soft_update",
    "ExplorationConfig",
    "PolicyConfig",
    "PolicyDecision",
    "WolpertingerPolicy",
    "make_actor",
    "make_critic",
    "proto_action",
]
