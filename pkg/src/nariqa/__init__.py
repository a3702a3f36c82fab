"""Non-aligned-reference image quality assessment via feature distillation.

A full-reference teacher network is trained on pixel-aligned image pairs,
then a student with the same architecture learns to score images against
arbitrary high-quality reference images, guided by the teacher's
difference-encoder activations.  Everything runs on a small numpy-based
autodiff engine; see the README for the CLI pipeline.
"""

from . import autodiff
from .autodiff import Tensor, backward, no_grad
from .checkpoint import Checkpoint, load_checkpoint, make_checkpoint, save_checkpoint
from .data import (DISTORTION_KINDS, DistortionSpec, PatchSet, ReferencePool,
                   Sample, SyntheticDataset, apply_distortion, augment,
                   build_synthetic_dataset, generate_synthetic_hq, load_manifest,
                   sample_aligned_patches, sample_nonaligned_patches,
                   synthetic_mos)
from .errors import (CheckpointError, ConfigError, DataError, DecodeError,
                     DistillationError, GraphError, MetricError, ShapeError,
                     UsageError)
from .estimators import (StudentRegressor, TeacherRegressor, TrainReport,
                         estimator_from_checkpoint, student_losses)
from .metrics import (EvalReport, LogisticFit, evaluate, fit_logistic, krcc,
                      plcc, predict_scores, srcc, write_report_csv)
from .network import (ArchConfig, ForwardTrace, ModelParams, encode_diff,
                      encode_lq, extract_multiscale_features, forward,
                      init_params, mixer_block, parameter_shapes)
from .optim import AdamState, adam_step, init_adam

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "no_grad", "autodiff",
    "AdamState", "adam_step", "init_adam",
    "ArchConfig", "ModelParams", "ForwardTrace", "init_params",
    "parameter_shapes", "forward", "mixer_block", "encode_lq", "encode_diff",
    "extract_multiscale_features",
    "DistortionSpec", "Sample", "PatchSet", "ReferencePool", "SyntheticDataset",
    "DISTORTION_KINDS", "generate_synthetic_hq", "apply_distortion",
    "synthetic_mos", "build_synthetic_dataset", "sample_aligned_patches",
    "sample_nonaligned_patches", "augment", "load_manifest",
    "TeacherRegressor", "StudentRegressor", "TrainReport", "student_losses",
    "estimator_from_checkpoint",
    "Checkpoint", "save_checkpoint", "load_checkpoint", "make_checkpoint",
    "srcc", "krcc", "plcc", "fit_logistic", "LogisticFit", "EvalReport",
    "evaluate", "predict_scores", "write_report_csv",
    "ShapeError", "GraphError", "ConfigError", "DataError", "DistillationError",
    "CheckpointError", "MetricError", "DecodeError", "UsageError",
]
