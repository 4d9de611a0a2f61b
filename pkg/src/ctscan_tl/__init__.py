"""Transfer-learning pipeline for CT-scan pneumonia classification.

Stratified splitting with balanced test subsets, augmentation, a classifier
head on a frozen backbone, Adam training with early stopping and plateau
learning-rate reduction, and per-subset evaluation reports.
"""
from .data import (DatasetManifest, ImageRecord, SplitRatios, compute_class_weights,
                   partition_test_subsets, scan_dataset, stratified_split)
from .errors import (ConfigError, DataError, DecodeError, LoadError, PipelineError, RenderError,
                     ShapeError, TrainingError)
from .evaluation import (ClassMetrics, ConfusionMatrix, EvaluationReport, average_reports,
                         confusion_matrix, evaluate, per_class_metrics)
from .model import (HeadConfig, Model, ResidualBlockConfig, ResidualInceptionBlock, assemble,
                    build_head, load_backbone, load_model)
from .report import emit_confusion_heatmaps, emit_curves, render_table, write_report
from .train import (OptimizerConfig, TrainingConfig, TrainingHistory, adam_step,
                    categorical_crossentropy, early_stopping_decision, fit, reduce_lr_on_plateau)
from .transform import AugmentationPolicy, apply_augmentation, build_policy, decode_and_resize

__version__ = "0.1.0"

__all__ = [
    "DatasetManifest", "ImageRecord", "SplitRatios", "compute_class_weights",
    "partition_test_subsets", "scan_dataset", "stratified_split",
    "ConfigError", "DataError", "DecodeError", "LoadError", "PipelineError", "RenderError",
    "ShapeError", "TrainingError",
    "ClassMetrics", "ConfusionMatrix", "EvaluationReport", "average_reports",
    "confusion_matrix", "evaluate", "per_class_metrics",
    "HeadConfig", "Model", "ResidualBlockConfig", "ResidualInceptionBlock", "assemble",
    "build_head", "load_backbone", "load_model",
    "emit_confusion_heatmaps", "emit_curves", "render_table", "write_report",
    "OptimizerConfig", "TrainingConfig", "TrainingHistory", "adam_step",
    "categorical_crossentropy", "early_stopping_decision", "fit", "reduce_lr_on_plateau",
    "AugmentationPolicy", "apply_augmentation", "build_policy", "decode_and_resize",
    "__version__",
]
