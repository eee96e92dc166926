from .hierarchy import (
    DEFAULT_HORIZON,
    HandcraftedSelector,
    MetaConfig,
    MetaGreedy,
    MetaTransition,
    OptionProcess,
    execute_option,
    handcrafted_selector,
    load_meta_checkpoint,
    meta_spec,
    meta_td_targets,
    run_hierarchical,
    save_meta_checkpoint,
    train_meta,
)
from .options import SCRIPTED, Learned, OptionPolicy, Scripted, UnknownOptionError, load_option
