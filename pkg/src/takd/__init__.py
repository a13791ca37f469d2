"""Desk-scale teacher-assistant knowledge distillation workbench."""

__version__ = "0.1.0"

from .bounds import (BoundParams, blkd_bound, check_ordering, find_crossover_n,
                     nokd_bound, takd_bound)
from .data import Dataset, gen_synthetic, load_idx
from .distill import (DistillConfig, DistillationPath, distill_chain, kd_loss,
                      student_loss, train)
from .gradcheck import gradient_check
from .models import (NetworkSpec, TrainedModel, build_model, cifar_cnn_spec,
                     cnn_spec, deserialize_model, load_model, mlp_spec,
                     model_capacity, save_model, serialize_model)
from .optim import OptimizerConfig, sgd_nesterov_step
from .planner import (ModelCache, SizeLadder, SurrogateEvaluator,
                      TrainingEvaluator, brute_force_optimal_path,
                      dp_optimal_path, enumerate_paths, full_path,
                      suggest_ta_size)
from .rng import RandomStream

__all__ = [
    "BoundParams", "Dataset", "DistillConfig", "DistillationPath",
    "ModelCache", "NetworkSpec", "OptimizerConfig", "RandomStream",
    "SizeLadder", "SurrogateEvaluator", "TrainedModel", "TrainingEvaluator",
    "blkd_bound", "brute_force_optimal_path", "build_model", "check_ordering",
    "cifar_cnn_spec", "cnn_spec", "deserialize_model", "distill_chain",
    "dp_optimal_path", "enumerate_paths", "find_crossover_n", "full_path",
    "gen_synthetic", "gradient_check", "kd_loss", "load_idx", "load_model",
    "mlp_spec", "model_capacity", "nokd_bound", "save_model",
    "serialize_model", "sgd_nesterov_step", "student_loss", "suggest_ta_size",
    "takd_bound", "train", "__version__",
]
