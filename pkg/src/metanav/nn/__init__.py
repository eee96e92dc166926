from .checkpoint import (
    CheckpointError,
    NotACheckpointError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
    load_checkpoint,
    save_checkpoint,
)
from .network import (
    ComputationRecord,
    Conv,
    Dense,
    DuelingHead,
    Gradients,
    LinearHead,
    NetworkParams,
    NetworkSpec,
    NonFiniteError,
    ReLU,
    ShapeError,
    StaleTapeError,
    backward,
    default_trunk,
    dueling_combine,
    forward,
    init_network,
    q_network_spec,
)
from .optim import AdamState, adam_step, clip_gradients, global_norm
