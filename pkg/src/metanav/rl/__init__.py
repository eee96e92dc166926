from .dqn import (
    BOOTSTRAP_STOP,
    ConfigError,
    EpisodeRecord,
    GreedyPolicy,
    NetworkBackend,
    Outcome,
    PrimitiveProcess,
    TabularBackend,
    TrainConfig,
    TrainingLog,
    double_dqn_targets,
    epsilon_at,
    evaluate,
    greedy_action,
    low_level_spec,
    run_dqn,
    td_targets,
    train_low_level,
    train_step,
)
from .replay import Batch, ReplayBuffer, Transition, UnderfullBufferError
from .stats import EpisodeStats
