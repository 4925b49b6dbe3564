"""TRIQA: rank-ordered distortion triplets for image quality assessment.

Forge severity-ranked triplets from pristine images, train a quality-aware
encoder with a triplet margin loss, fuse quality and content features into
an SVR head for no-reference scoring, and score full-reference pairs by
embedding cosine similarity.
"""

__version__ = "0.1.0"

from .distortions import DistortionSpec, apply_chain, apply_distortion, distortion_ids, ladder
from .encoder import Checkpoint, EncoderConfig, embed, load_checkpoint, save_checkpoint
from .errors import DataError, NumericalError, TriqaError, UsageError
from .features import (
    SCALES,
    FeatureVector,
    extract_content_features,
    extract_fused,
    extract_fused_matrix,
    extract_quality_features,
    fuse,
    load_features,
    save_features,
)
from .fr import cosine_similarity, evaluate_fr, score_fr
from .harness import (
    EvalReport,
    build_fr_report,
    build_nr_report,
    emit_report,
    format_percent_delta,
    load_dataset_table,
    percent_delta,
    run_ablation,
)
from .images import ImageStore, list_corpus, load_image, psnr, save_image
from .losses import triplet_margin_loss
from .metrics import plcc, srcc
from .pipeline import PipelineConfig, load_pipeline_config, run_pipeline, write_config_template
from .regression import (
    RegressionModel,
    SplitProtocol,
    fit,
    load_model,
    predict,
    run_protocol,
    save_model,
)
from .training import train
from .triplets import Manifest, build_manifest, read_manifest, render_triplet, write_manifest

__all__ = [
    "__version__",
    "Checkpoint",
    "DataError",
    "DistortionSpec",
    "EncoderConfig",
    "EvalReport",
    "FeatureVector",
    "ImageStore",
    "Manifest",
    "NumericalError",
    "PipelineConfig",
    "RegressionModel",
    "SCALES",
    "SplitProtocol",
    "TriqaError",
    "UsageError",
    "apply_chain",
    "apply_distortion",
    "build_fr_report",
    "build_manifest",
    "build_nr_report",
    "cosine_similarity",
    "distortion_ids",
    "embed",
    "emit_report",
    "evaluate_fr",
    "extract_content_features",
    "extract_fused",
    "extract_fused_matrix",
    "extract_quality_features",
    "fit",
    "format_percent_delta",
    "fuse",
    "ladder",
    "list_corpus",
    "load_checkpoint",
    "load_dataset_table",
    "load_features",
    "load_image",
    "load_model",
    "load_pipeline_config",
    "percent_delta",
    "plcc",
    "predict",
    "psnr",
    "read_manifest",
    "render_triplet",
    "run_ablation",
    "run_pipeline",
    "run_protocol",
    "save_checkpoint",
    "save_features",
    "save_image",
    "save_model",
    "score_fr",
    "srcc",
    "train",
    "triplet_margin_loss",
    "write_config_template",
    "write_manifest",
]
