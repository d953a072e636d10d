"""Visual-guided text head over frozen image/text feature banks.

Class-text embeddings are refined per image by attending to spatial
image tokens through stacked pre-norm decoder blocks, then matched to
the global image feature by scaled cosine similarity. Supports few-shot
training (only the head trains), zero-shot baselines, head/layer
ablation sweeps and attention-map export, all over serialized feature
banks.
"""

from .attention import (
    AttentionTrace,
    VTParams,
    attention_map,
    init_params,
    multi_head_attention,
    n_parameters,
    vt_backward,
    vt_forward,
    vt_forward_cached,
)
from .bank import (
    ClassEmbeddings,
    FeatureBank,
    ImageRecord,
    SynthConfig,
    sample_shots,
    subset_bank,
    synth_bank,
)
from .errors import (
    BadMagicError,
    CacheMismatchError,
    ConfigError,
    DegenerateFeatureError,
    DimensionError,
    DivergenceError,
    FormatError,
    ShapeError,
    ShotSamplingError,
    TruncatedFileError,
    VersionError,
    VTError,
)
from .estimator import VTClassifier
from .formats import (
    read_bank,
    read_class_embeddings,
    read_params,
    write_bank,
    write_class_embeddings,
    write_params,
)
from .gradcheck import grad_check
from .matching import (
    DEFAULT_LOGIT_SCALE,
    Logits,
    accuracy,
    cross_entropy,
    predict,
    vt_logits,
    zero_shot_logits,
)
from .ops import affine, layer_norm, normalize_rows, softmax_rows
from .trainer import (
    AblationCell,
    TrainConfig,
    TrainReport,
    ablate,
    evaluate,
    param_checksum,
    train,
    write_report,
    write_sweep_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AblationCell",
    "AttentionTrace",
    "BadMagicError",
    "CacheMismatchError",
    "ClassEmbeddings",
    "ConfigError",
    "DEFAULT_LOGIT_SCALE",
    "DegenerateFeatureError",
    "DimensionError",
    "DivergenceError",
    "FeatureBank",
    "FormatError",
    "ImageRecord",
    "Logits",
    "ShapeError",
    "ShotSamplingError",
    "SynthConfig",
    "TrainConfig",
    "TrainReport",
    "TruncatedFileError",
    "VTClassifier",
    "VTError",
    "VTParams",
    "VersionError",
    "accuracy",
    "affine",
    "attention_map",
    "ablate",
    "cross_entropy",
    "evaluate",
    "grad_check",
    "init_params",
    "layer_norm",
    "multi_head_attention",
    "n_parameters",
    "normalize_rows",
    "param_checksum",
    "predict",
    "read_bank",
    "read_class_embeddings",
    "read_params",
    "sample_shots",
    "softmax_rows",
    "subset_bank",
    "synth_bank",
    "train",
    "vt_backward",
    "vt_forward",
    "vt_forward_cached",
    "vt_logits",
    "write_bank",
    "write_class_embeddings",
    "write_params",
    "write_report",
    "write_sweep_csv",
    "zero_shot_logits",
]
