"""Rail ego-path detection: anchor-based rail regression with
classification and segmentation counterparts, a crop-centric augmentation
pipeline, and an IoU/latency evaluation protocol."""

from .annotations import (DatasetSplit, EgoPathAnnotation, auto_select_ego_pair,
                          load_annotations, save_annotations, split_dataset)
from .augmentation import AugmentationConfig, TrajectoryTarget, build_sample
from .geometry import CropRegion, PathMask, Polyline, iou, rasterize_path, transform_path
from .inference import (AdaptiveCropConfig, CropState, EgoPathPrediction,
                        adaptive_crop_update, benchmark_latency, decode_classification,
                        decode_regression, decode_segmentation, initial_crop_state,
                        render_overlay)
from .losses import LossConfig, composite_loss, dice_loss, rowwise_cross_entropy, smooth_l1
from .models import (BackboneSpec, ClassificationHeadSpec, RegressionHeadSpec,
                     SegmentationHeadSpec, build_model, count_params_and_macs,
                     load_checkpoint, save_checkpoint)
from .synthetic import SceneConfig, generate_synthetic_scene
from .training import RunHistory, TrainConfig, TrainingData, one_cycle_lr, select_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AdaptiveCropConfig", "AugmentationConfig", "BackboneSpec", "ClassificationHeadSpec",
    "CropRegion", "CropState", "DatasetSplit", "EgoPathAnnotation", "EgoPathPrediction",
    "LossConfig", "PathMask", "Polyline", "RegressionHeadSpec", "RunHistory", "SceneConfig",
    "SegmentationHeadSpec", "TrainConfig", "TrainingData", "TrajectoryTarget",
    "adaptive_crop_update", "auto_select_ego_pair", "benchmark_latency", "build_model",
    "build_sample", "composite_loss", "count_params_and_macs", "decode_classification",
    "decode_regression", "decode_segmentation", "dice_loss", "generate_synthetic_scene",
    "initial_crop_state", "iou", "load_annotations", "load_checkpoint", "one_cycle_lr",
    "rasterize_path", "render_overlay", "rowwise_cross_entropy", "save_annotations",
    "save_checkpoint", "select_checkpoint", "smooth_l1", "split_dataset", "train",
    "transform_path",
]
