"""LI-RADS-guided liver lesion classification pipeline."""

from .cases import CaseRecord, LiradsFlags, PhaseSet, load_case, load_manifest, save_case, save_manifest
from .errors import ConfigError, DataError, FusionError
from .evaluation import (
    EvalReport,
    FoldSplit,
    auc,
    cross_validate,
    lirads_to_prob,
    load_probs_dir,
    stratified_folds,
    transfer_evaluate,
)
from .model import (
    COMPONENT_NAMES,
    DEFAULT_LAMBDA_GRID,
    DeepProbs,
    FeatureSubset,
    LogisticFusion,
    assemble,
    assemble_matrix,
    load_deep_probs,
    tune_lambda,
    write_probs_csv,
)
from .phantom import PhantomConfig, expected_features, generate_case, generate_dataset
from .preprocess import (
    PATCH_DIMS,
    TARGET_SPACING,
    Patch,
    PatchMode,
    apply_z_shift,
    extract_patch,
    preprocess_case,
    read_patch,
    register_z,
    resample_nn,
    write_patch,
)
from .radiomics import (
    HandcraftedFeatureExtractor,
    HandcraftedFeatures,
    compute_features,
    energy_hu,
    f_aphe,
    f_ec,
    f_npw,
    lesion_border,
    lesion_diameter,
    median_hu,
    parenchyma_mask,
    read_features_csv,
    write_features_csv,
)
from .volume import Mask3D, Spacing, Volume3D, read_mask, read_volume, region_values, write_volume

__version__ = "0.1.0"
