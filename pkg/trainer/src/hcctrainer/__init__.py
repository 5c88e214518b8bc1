"""3D CNN trainers for the four lesion criteria."""

from .backbone import Backbone3D, BackboneSpec, build_backbone, parameter_count
from .errors import TrainerError
from .export import export_fold_probs, predict_positive_probs, train_criterion_suite
from .patches import CRITERIA, PatchRecord, load_batch, load_tensor, read_patch_array, scan_patches
from .training import TrainConfig, TrainResult, load_checkpoint, stratified_fold_assignments, train

__version__ = "0.1.0"
