"""Train a small regression model on a few synthetic scenes and look at
what it learned.

This is a miniature of the full pipeline: seeded scene generation, a
deterministic split, one-cycle training with online augmentation,
last-decile checkpoint selection, and IoU evaluation of the decoded paths
in original-image coordinates.  Expect a couple of minutes on a laptop
CPU; bump EPOCHS for a visibly tighter fit.

Outputs land in demos/output/train_eval/.
"""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from railpath.annotations import split_dataset
from railpath.augmentation import AugmentationConfig, build_sample
from railpath.inference import decode_regression, render_overlay
from railpath.losses import LossConfig
from railpath.models import image_to_tensor
from railpath.synthetic import SceneConfig, generate_dataset
from railpath.training import TrainConfig, TrainingData, select_checkpoint, train, validate

EPOCHS = 40
OUT = Path(__file__).parent / "output" / "train_eval"
OUT.mkdir(parents=True, exist_ok=True)

images, annotations = generate_dataset(99, 12, SceneConfig(width=480, height=270,
                                                           track_count=[1, 2]))
split = split_dataset(sorted(images), seed=0)  # 10 train / 1 val / 1 test
data = TrainingData(images=images, annotations=annotations, split=split)

aug = AugmentationConfig(working_size=160)
loss_cfg = LossConfig()
cfg = TrainConfig(paradigm="regression", backbone="resnet18", batch_size=4,
                  epochs=EPOCHS, peak_lr=1e-3, seed=0)
model, history = train(cfg, data, aug_config=aug, loss_config=loss_cfg, out_dir=OUT)

chosen = select_checkpoint(history, epochs=EPOCHS)
print(f"selected checkpoint: epoch {chosen} "
      f"(val loss {history.records[chosen - 1].val_loss:.4f})")

for name, ids in (("train", data.split.train[:3]), ("held-out", data.split.val + data.split.test)):
    loss, mean_iou = validate(model, data, ids, "regression", aug, loss_cfg)
    print(f"{name:>9}: loss {loss:.4f}, IoU {mean_iou:.3f} over {len(ids)} images")

# Overlay the decoded prediction on one held-out image.
image_id = data.split.test[0]
ann = annotations[image_id]
working, _, crop = build_sample(images[image_id], ann, np.random.default_rng(0),
                                aug.deterministic())
with torch.no_grad():
    vector = model(image_to_tensor(working).unsqueeze(0))[0].numpy()
pred = decode_regression(vector, crop, (ann.image_width, ann.image_height))
Image.fromarray(render_overlay(images[image_id], pred)).save(OUT / f"{image_id}_prediction.png")
print(f"wrote prediction overlay to {OUT / f'{image_id}_prediction.png'}")
