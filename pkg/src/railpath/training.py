"""Training loop: Adam + one-cycle schedule, online augmentation, per-epoch
validation, and last-decile checkpoint selection."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .annotations import DatasetSplit, EgoPathAnnotation
from .augmentation import AugmentationConfig, TrajectoryTarget, build_sample, target_path_mask
from .geometry import CropRegion, iou, rasterize_rail_pair
from .inference import decode_classification, decode_regression, decode_segmentation, prediction_path_mask
from .losses import LossConfig, batched_composite_loss, columns_from_target, compute_wmax, dice_loss, rowwise_cross_entropy
from .models import (ClassificationHeadSpec, RegressionHeadSpec, SegmentationHeadSpec,
                     PathModel, build_model, image_to_tensor, save_checkpoint)

log = logging.getLogger(__name__)

PARADIGMS = ("regression", "classification", "segmentation")
DEFAULT_EPOCHS = {"regression": 400, "segmentation": 300, "classification": 200}
_VAL_SEED_SALT = 0x5EED

# Schedule shape: warm up over the first 30% of steps from peak/1000,
# cosine-anneal down to peak/1e6 by the final step.
_WARMUP_FRACTION = 0.3
_START_DIV = 1000.0
_FINAL_DIV = 1e6


class TrainingError(RuntimeError):
    """Training could not proceed (bad config or diverged optimization)."""


@dataclass
class TrainConfig:
    paradigm: str = "regression"
    backbone: str = "resnet18"
    batch_size: int = 8
    epochs: int | None = None        # None -> paradigm default
    peak_lr: float = 1e-4
    seed: int = 0
    pretrained: bool = False
    device: str = "cpu"
    num_columns: int = 128           # classification grid width
    compute_wmax_from_data: bool = False

    def __post_init__(self) -> None:
        if self.paradigm not in PARADIGMS:
            raise TrainingError(f"paradigm must be one of {PARADIGMS}, got {self.paradigm!r}")
        if self.epochs is not None and self.epochs <= 0:
            raise TrainingError("epochs must be positive")
        if self.batch_size <= 0:
            raise TrainingError("batch size must be positive")
        if self.peak_lr <= 0:
            raise TrainingError("peak learning rate must be positive")

    def resolved_epochs(self) -> int:
        return self.epochs if self.epochs is not None else DEFAULT_EPOCHS[self.paradigm]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_iou: float
    seconds: float
    checkpoint_path: str | None = None


@dataclass
class RunHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.records]

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps([dataclasses.asdict(r) for r in self.records], indent=1),
                              encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "RunHistory":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(records=[EpochRecord(**r) for r in raw])


@dataclass
class TrainingData:
    """In-memory dataset: images and annotations by id, plus the split."""

    images: dict[str, np.ndarray]
    annotations: dict[str, EgoPathAnnotation]
    split: DatasetSplit

    def __post_init__(self) -> None:
        missing = [i for i in (*self.split.train, *self.split.val) if i not in self.annotations]
        if missing:
            raise TrainingError(f"split references unknown ids: {missing[:5]}")


def one_cycle_lr(step: int, total_steps: int, peak: float) -> float:
    """Learning rate at `step` of a single rise-then-decay cycle.

    The rate reaches exactly `peak` once, at the end of the warmup span,
    and both endpoints sit far below peak/100.
    """
    if not 0 <= step < total_steps:
        raise TrainingError(f"step {step} outside [0, {total_steps})")
    if total_steps == 1:
        return peak
    up = int(round(_WARMUP_FRACTION * (total_steps - 1)))
    start = peak / _START_DIV
    end = peak / _FINAL_DIV
    if step <= up:
        if up == 0:
            return peak
        t = step / up
        return start + (peak - start) * 0.5 * (1.0 - math.cos(math.pi * t))
    t = (step - up) / (total_steps - 1 - up)
    return end + (peak - end) * 0.5 * (1.0 + math.cos(math.pi * t))


def select_checkpoint(history: RunHistory, epochs: int | None = None) -> int:
    """1-based epoch of the lowest validation loss within the final decile."""
    n = len(history)
    if n == 0 or (epochs is not None and n != epochs):
        raise TrainingError(f"history incomplete: {n} records, expected {epochs}")
    window = max(1, math.ceil(0.1 * n))
    tail = history.records[n - window:]
    best = min(tail, key=lambda r: r.val_loss)
    return best.epoch


def _rng_for(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(keys)))


def _id_hash(image_id: str) -> int:
    return zlib.crc32(image_id.encode("utf-8"))


def _target_tensors(paradigm: str, samples: list[tuple[np.ndarray, TrajectoryTarget, CropRegion]],
                    config: TrainConfig, work_size: int, device: str):
    if paradigm == "classification":
        cols = np.stack([columns_from_target(t, config.num_columns) for _, t, _ in samples])
        return torch.as_tensor(cols, device=device)
    if paradigm == "segmentation":
        masks = [target_path_mask(t, work_size).data for _, t, _ in samples]
        return torch.as_tensor(np.stack(masks)[:, None], dtype=torch.float32, device=device)
    x = torch.as_tensor(np.stack([t.x for _, t, _ in samples]), dtype=torch.float32, device=device)
    mask = torch.as_tensor(np.stack([t.mask for _, t, _ in samples]), device=device)
    ylim = torch.as_tensor(np.array([t.y_lim for _, t, _ in samples]), dtype=torch.float32, device=device)
    return x, mask, ylim


def _batch_loss(paradigm: str, outputs: torch.Tensor, targets, loss_config: LossConfig) -> torch.Tensor:
    if paradigm == "regression":
        x, mask, ylim = targets
        return batched_composite_loss(outputs, x, mask, ylim, loss_config)
    if paradigm == "classification":
        return rowwise_cross_entropy(outputs, targets)
    return dice_loss(torch.sigmoid(outputs), targets)


def _head_spec_for(config: TrainConfig, aug: AugmentationConfig):
    if config.paradigm == "regression":
        return RegressionHeadSpec(anchor_count=aug.anchor_count)
    if config.paradigm == "classification":
        return ClassificationHeadSpec(anchor_count=aug.anchor_count, columns=config.num_columns)
    return SegmentationHeadSpec()


def train(config: TrainConfig, data: TrainingData,
          aug_config: AugmentationConfig | None = None,
          loss_config: LossConfig | None = None,
          out_dir=None) -> tuple[PathModel, RunHistory]:
    """Train per the config; returns the model restored to the selected
    checkpoint (lowest validation loss in the final decile) and the history.

    Online augmentation: each image is re-augmented with a fresh draw at
    every epoch.  The run is deterministic for a fixed seed up to platform
    numerics.
    """
    aug = aug_config or AugmentationConfig()
    loss_cfg = loss_config or LossConfig(anchor_count=aug.anchor_count)
    if loss_cfg.anchor_count != aug.anchor_count:
        raise TrainingError("loss and augmentation anchor counts disagree")
    epochs = config.resolved_epochs()
    if not data.split.train or not data.split.val:
        raise TrainingError("train and val splits must be nonempty")

    torch.manual_seed(config.seed)
    model = build_model(config.backbone, _head_spec_for(config, aug),
                        pretrained=config.pretrained, input_size=aug.working_size)
    model.to(config.device)
    optimizer = torch.optim.Adam(model.parameters(), lr=one_cycle_lr(0, max(1, epochs), config.peak_lr),
                                 betas=(0.9, 0.999), eps=1e-8)

    if config.compute_wmax_from_data and config.paradigm == "regression":
        loss_cfg = dataclasses.replace(loss_cfg, w_max=_wmax_from_split(data, aug, config.seed))
        log.info("computed w_max=%.3f from the training split", loss_cfg.w_max)

    train_ids = list(data.split.train)
    steps_per_epoch = math.ceil(len(train_ids) / config.batch_size)
    total_steps = epochs * steps_per_epoch
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    history = RunHistory()
    decile_start = epochs - max(1, math.ceil(0.1 * epochs))
    best_val = float("inf")
    best_state = None
    best_path = None
    step = 0
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        model.train()
        order = _rng_for(config.seed, epoch).permutation(len(train_ids))
        epoch_losses = []
        for start in range(0, len(train_ids), config.batch_size):
            batch_ids = [train_ids[i] for i in order[start:start + config.batch_size]]
            samples = [
                build_sample(data.images[i], data.annotations[i],
                             _rng_for(config.seed, epoch, _id_hash(i)), aug)
                for i in batch_ids
            ]
            inputs = torch.stack([image_to_tensor(img) for img, _, _ in samples]).to(config.device)
            targets = _target_tensors(config.paradigm, samples, config, aug.working_size, config.device)
            lr = one_cycle_lr(step, total_steps, config.peak_lr)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            outputs = model(inputs)
            loss = _batch_loss(config.paradigm, outputs, targets, loss_cfg)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} step {step} (lr={lr:.2e}); aborting")
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
            step += 1

        val_loss, val_iou = validate(model, data, data.split.val, config.paradigm,
                                     aug, loss_cfg, config, device=config.device)
        record = EpochRecord(epoch=epoch, train_loss=float(np.mean(epoch_losses)),
                             val_loss=val_loss, val_iou=val_iou,
                             seconds=time.perf_counter() - t0)
        if epoch > decile_start and val_loss < best_val:
            best_val = val_loss
            best_state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
            if out_path is not None:
                best_path = str(out_path / "checkpoint_best.pt")
                save_checkpoint(model, best_path, fingerprint=f"seed={config.seed},epoch={epoch}")
            record.checkpoint_path = best_path
        history.records.append(record)
        log.info("epoch %d/%d train %.5f val %.5f iou %.4f", epoch, epochs,
                 record.train_loss, val_loss, val_iou)

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    if out_path is not None:
        history.to_json(out_path / "history.json")
    return model, history


def _wmax_from_split(data: TrainingData, aug: AugmentationConfig, seed: int) -> float:
    targets = []
    for image_id in data.split.train:
        _, target, _ = build_sample(data.images[image_id], data.annotations[image_id],
                                    _rng_for(seed, 0, _id_hash(image_id)), aug)
        targets.append(target)
    return compute_wmax(targets)


def validate(model: PathModel, data: TrainingData, split_ids, paradigm: str,
             aug: AugmentationConfig, loss_cfg: LossConfig, config: TrainConfig | None = None,
             device: str = "cpu") -> tuple[float, float]:
    """Mean loss and mean IoU over a split.

    Crops are drawn exactly as in training but from a fixed per-image seed,
    with photometric jitter and flips disabled, so numbers are comparable
    across epochs.
    """
    ids = list(split_ids)
    if not ids:
        raise TrainingError("cannot validate an empty split")
    eval_aug = aug.evaluation()
    cfg = config or TrainConfig(paradigm=paradigm)
    model.eval()
    losses = []
    ious = []
    with torch.no_grad():
        for image_id in ids:
            ann = data.annotations[image_id]
            image = data.images[image_id]
            sample = build_sample(image, ann, _rng_for(_VAL_SEED_SALT, _id_hash(image_id)), eval_aug)
            working, target, crop = sample
            inputs = image_to_tensor(working).unsqueeze(0).to(device)
            output = model(inputs)
            targets = _target_tensors(paradigm, [sample], cfg, eval_aug.working_size, device)
            losses.append(float(_batch_loss(paradigm, output, targets, loss_cfg)))
            ious.append(evaluate_iou(output[0], ann, crop, paradigm))
    return float(np.mean(losses)), float(np.mean(ious))


def evaluate_iou(output: torch.Tensor, annotation: EgoPathAnnotation,
                 crop: CropRegion, paradigm: str) -> float:
    """IoU between the decoded prediction and the annotation's mask, both
    rasterized in original-image coordinates."""
    dims = (annotation.image_width, annotation.image_height)
    if paradigm == "segmentation":
        pred_mask = decode_segmentation(output, crop, dims)
    elif paradigm == "classification":
        pred_mask = prediction_path_mask(decode_classification(output, crop, dims), dims)
    else:
        pred_mask = prediction_path_mask(decode_regression(output, crop, dims), dims)
    target_mask = rasterize_rail_pair(annotation.left_rail, annotation.right_rail, dims)
    return iou(pred_mask, target_mask)
