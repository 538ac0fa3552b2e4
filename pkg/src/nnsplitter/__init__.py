"""Active CNN model protection: split a trained model into an obfuscated
public checkpoint and compact secrets that restore full accuracy."""

from .controller import (ActionSet, ControllerConfig, ControllerPolicy,
                         EpisodeBatch, RewardBaseline, reinforce_update,
                         sample_actions)
from .data import DatasetSplit, load_dataset, synthetic_split
from .mask import (MaskParams, WeightProfile, calibrate_epsilon, compute_c,
                   eligible_set, profile_weights)
from .models import (LayerSpec, WeightStore, evaluate_accuracy, locate,
                     locate_inverse, train_victim)
from .obfuscator import (DeltaStore, FilterMask, ObfuscationReport,
                         OptimizerConfig, PipelineResult, build_mask,
                         evaluate_reward, optimize_delta, run_pipeline)
from .splitter import (ModelSecrets, deserialize_secrets,
                       normal_world_inference, restore_weights,
                       secure_inference, serialize_secrets, split_model)

__version__ = "0.1.0"

__all__ = [
    "ActionSet", "ControllerConfig", "ControllerPolicy", "DatasetSplit",
    "DeltaStore", "EpisodeBatch", "FilterMask", "LayerSpec", "MaskParams",
    "ModelSecrets", "ObfuscationReport", "OptimizerConfig", "PipelineResult",
    "RewardBaseline", "WeightProfile", "WeightStore", "build_mask",
    "calibrate_epsilon", "compute_c", "deserialize_secrets", "eligible_set",
    "evaluate_accuracy", "evaluate_reward", "load_dataset", "locate",
    "locate_inverse", "normal_world_inference", "optimize_delta",
    "profile_weights", "reinforce_update", "restore_weights", "run_pipeline",
    "sample_actions", "secure_inference", "serialize_secrets", "split_model",
    "synthetic_split", "train_victim",
]
