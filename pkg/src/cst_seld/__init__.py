"""
cst_seld: CST-former sound event localization and detection on a numpy
autodiff core.
"""

from importlib.metadata import PackageNotFoundError, version

from cst_seld.acs import (
    ACS_TRANSFORMS,
    PERTURBATION,
    AcsTransform,
    apply_audio,
    apply_direction,
    apply_features,
    get_transform,
    unrotate,
)
from cst_seld.analysis import analyze, cosine_similarity_matrix, export_channel_attention
from cst_seld.checkpoint import load_checkpoint, save_checkpoint
from cst_seld.config import (
    AugmentConfig,
    CtaiConfig,
    ModelConfig,
    RunConfig,
    load_run_config,
    preset,
    run_config_from_mapping,
)
from cst_seld.decode import (
    DecodedEvent,
    decode_multi_accdoa,
    events_to_csv,
    threshold_events,
    unify_tracks,
)
from cst_seld.enums import (
    AttentionDomain,
    Augmentation,
    LossKind,
    MaskGradient,
    PoolingProfile,
    Precision,
    SignalKind,
)
from cst_seld.errors import (
    ConfigurationError,
    DataError,
    EmptyInputError,
    LabelError,
    MetricsUndefinedError,
    NumericError,
    SeldError,
    UsageError,
)
from cst_seld.evalmetrics import MetricReport, compute_metrics, match_frame, seld_score
from cst_seld.features import FeatureTensor, MultichannelAudio, extract_features
from cst_seld.infertools import ctai, inference_overlap, infer_clip, kmeans
from cst_seld.model import (
    AttentionMapBundle,
    Parameters,
    forward,
    forward_with_attention,
    init_parameters,
    make_predictor,
)
from cst_seld.objective import (
    AdpitTargetSet,
    EventLabelFrame,
    adpit_loss,
    assemble_adpit_targets,
    vtm_loss,
)
from cst_seld.synth import SceneEvent, SyntheticScene, random_scene, render_scene
from cst_seld.tensor import Tensor, default_precision
from cst_seld.training import Adam, train, tri_stage_lr

__all__ = [
    "ACS_TRANSFORMS",
    "PERTURBATION",
    "AcsTransform",
    "apply_audio",
    "apply_direction",
    "apply_features",
    "get_transform",
    "unrotate",
    "analyze",
    "cosine_similarity_matrix",
    "export_channel_attention",
    "load_checkpoint",
    "save_checkpoint",
    "AugmentConfig",
    "CtaiConfig",
    "ModelConfig",
    "RunConfig",
    "load_run_config",
    "preset",
    "run_config_from_mapping",
    "DecodedEvent",
    "decode_multi_accdoa",
    "events_to_csv",
    "threshold_events",
    "unify_tracks",
    "AttentionDomain",
    "Augmentation",
    "LossKind",
    "MaskGradient",
    "PoolingProfile",
    "Precision",
    "SignalKind",
    "ConfigurationError",
    "DataError",
    "EmptyInputError",
    "LabelError",
    "MetricsUndefinedError",
    "NumericError",
    "SeldError",
    "UsageError",
    "MetricReport",
    "compute_metrics",
    "match_frame",
    "seld_score",
    "FeatureTensor",
    "MultichannelAudio",
    "extract_features",
    "ctai",
    "inference_overlap",
    "infer_clip",
    "kmeans",
    "AttentionMapBundle",
    "Parameters",
    "forward",
    "forward_with_attention",
    "init_parameters",
    "make_predictor",
    "AdpitTargetSet",
    "EventLabelFrame",
    "adpit_loss",
    "assemble_adpit_targets",
    "vtm_loss",
    "SceneEvent",
    "SyntheticScene",
    "random_scene",
    "render_scene",
    "Tensor",
    "default_precision",
    "Adam",
    "train",
    "tri_stage_lr",
]

try:
    __version__ = version("cst-seld")
except PackageNotFoundError:
    __version__ = "unknown"
