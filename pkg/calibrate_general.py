"""Calibration for the generalization gate: 200 train scenes, 50 held-out,
target mean IoU >= 0.90 under the deterministic eval protocol."""
import sys
import time

import numpy as np
import torch

from railpath.annotations import split_dataset
from railpath.augmentation import AugmentationConfig, build_sample
from railpath.geometry import iou, rasterize_rail_pair
from railpath.inference import decode_regression, prediction_path_mask
from railpath.losses import LossConfig
from railpath.models import image_to_tensor
from railpath.synthetic import SceneConfig, generate_dataset
from railpath.training import TrainConfig, TrainingData, train

backbone = sys.argv[1] if len(sys.argv) > 1 else "resnet18"
size = int(sys.argv[2]) if len(sys.argv) > 2 else 256
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 28
lr = float(sys.argv[4]) if len(sys.argv) > 4 else 1e-3

images, anns = generate_dataset(1234, 250, SceneConfig())
split = split_dataset(sorted(images), seed=7)  # 200 / 25 / 25
data = TrainingData(images=images, annotations=anns, split=split)

aug = AugmentationConfig(working_size=size)
cfg = TrainConfig(paradigm="regression", backbone=backbone, batch_size=8,
                  epochs=epochs, peak_lr=lr, seed=0)
t0 = time.time()
model, history = train(cfg, data, aug_config=aug, loss_config=LossConfig())
wall = time.time() - t0

eval_aug = aug.deterministic()
held_out = list(split.val) + list(split.test)
vals = []
with torch.no_grad():
    for image_id in held_out:
        ann = anns[image_id]
        working, target, crop = build_sample(images[image_id], ann,
                                             np.random.default_rng(0), eval_aug)
        out = model(image_to_tensor(working).unsqueeze(0))[0]
        dims = (ann.image_width, ann.image_height)
        pm = prediction_path_mask(decode_regression(out.numpy(), crop, dims), dims)
        tm = rasterize_rail_pair(ann.left_rail, ann.right_rail, dims)
        vals.append(iou(pm, tm))
vals = np.array(vals)
print(f"RESULT {backbone}@{size} epochs={epochs} lr={lr}: held-out IoU mean {vals.mean():.4f} "
      f"min {vals.min():.4f} (n={len(vals)}), wall {wall/60:.1f} min")
for r in history.records[:: max(1, epochs // 8)]:
    print(f"  epoch {r.epoch:3d}: train {r.train_loss:.4f} val {r.val_loss:.4f} iou {r.val_iou:.4f}")
