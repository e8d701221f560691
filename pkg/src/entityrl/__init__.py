"""Entity-based reinforcement learning workbench.

2D playground scenarios with entity, graph and visual observations,
interchangeable CNN / slot-attention / graph-attention policy encoders,
and a PPO actor-critic trainer, all on a small numpy autodiff core.
"""

from .config import ConfigError, RunConfig, load_config, save_config
from .playground import (Action, Entity, Playground, ScenarioSpec, StepResult,
                         build_scenario)
from .sensors import (EntitySet, GraphObs, VisualStrip, build_graph,
                      sense_entities, sense_visual)
from .frames import Blob, blobs_to_features, extract_blobs, stack_frames
from .encoders import CNNStripEncoder, GATEncoder, SlotAttentionEncoder
from .ppo import (PolicyNet, RolloutBuffer, TrainAbort, collect_rollouts,
                  compute_gae, evaluate, make_policy, ppo_update, train)

__all__ = [
    "Action", "Blob", "CNNStripEncoder", "ConfigError", "Entity", "EntitySet",
    "GATEncoder", "GraphObs", "Playground", "PolicyNet", "RolloutBuffer",
    "RunConfig", "ScenarioSpec", "SlotAttentionEncoder", "StepResult",
    "TrainAbort", "VisualStrip", "build_graph", "build_scenario",
    "blobs_to_features", "collect_rollouts", "compute_gae", "evaluate",
    "extract_blobs", "load_config", "make_policy", "ppo_update",
    "save_config", "sense_entities", "sense_visual", "stack_frames", "train",
]

__version__ = "0.1.0"
