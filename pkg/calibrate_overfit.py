"""Calibration for the overfit gate: which backbone/resolution/steps reach
IoU 0.95 on 8 memorized scenes fastest on this CPU."""
import sys
import time

import numpy as np
import torch

from railpath.annotations import DatasetSplit
from railpath.augmentation import AugmentationConfig
from railpath.losses import LossConfig
from railpath.synthetic import SceneConfig, generate_dataset
from railpath.training import TrainConfig, TrainingData, train, validate

backbone = sys.argv[1] if len(sys.argv) > 1 else "resnet18"
size = int(sys.argv[2]) if len(sys.argv) > 2 else 256
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 300
lr = float(sys.argv[4]) if len(sys.argv) > 4 else 1e-3

images, anns = generate_dataset(42, 10, SceneConfig(track_count=[1, 2], clutter=0.3))
ids = sorted(images)
split = DatasetSplit(train=tuple(ids[:8]), val=tuple(ids[8:]), test=(), seed=42)
data = TrainingData(images=images, annotations=anns, split=split)

aug = AugmentationConfig(working_size=size).deterministic()
cfg = TrainConfig(paradigm="regression", backbone=backbone, batch_size=8,
                  epochs=epochs, peak_lr=lr, seed=0)
loss_cfg = LossConfig(anchor_count=aug.anchor_count)

t0 = time.time()
model, history = train(cfg, data, aug_config=aug, loss_config=loss_cfg)
elapsed = time.time() - t0

train_split_loss, train_iou = validate(model, data, split.train, "regression", aug, loss_cfg)
print(f"RESULT {backbone}@{size} epochs={epochs} lr={lr}: "
      f"train-image IoU {train_iou:.4f}, loss epoch1 {history.records[0].train_loss:.4f} "
      f"-> final {history.records[-1].train_loss:.5f}, wall {elapsed/60:.1f} min")
for r in history.records[::max(1, epochs // 10)]:
    print(f"  epoch {r.epoch:4d}: train {r.train_loss:.5f} val {r.val_loss:.5f} iou {r.val_iou:.4f}")
