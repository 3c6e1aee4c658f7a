"""Show what one training image becomes under the crop-based augmentation.

The same scene is augmented eight times: the crop is re-centered on the
rail base, margins are added, the left/top/right borders get clipped
normal shifts, then photometric jitter and a possible horizontal flip.
The per-anchor regression target is drawn over each result.

Outputs land in demos/output/augmentation_gallery.png.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from railpath.augmentation import AugmentationConfig, anchor_pixel_points, build_sample
from railpath.inference import EgoPathPrediction, render_overlay
from railpath.synthetic import SceneConfig, generate_synthetic_scene

OUT = Path(__file__).parent / "output"
OUT.mkdir(parents=True, exist_ok=True)

image, ann = generate_synthetic_scene(np.random.default_rng(7),
                                      SceneConfig(track_count=[2, 3]), image_id="demo")
aug = AugmentationConfig(working_size=256)

tiles = []
for seed in range(8):
    working, target, crop = build_sample(image, ann, np.random.default_rng(seed), aug)
    lx, rx, rows = anchor_pixel_points(target, aug.working_size)
    k = target.valid_prefix()
    pred = EgoPathPrediction(left=np.column_stack([lx[:k], rows[:k]]),
                             right=np.column_stack([rx[:k], rows[:k]]))
    tiles.append(render_overlay(working, pred, width=2))
    print(f"draw {seed}: crop ({crop.left:.0f},{crop.top:.0f})-({crop.right:.0f},{crop.bottom:.0f})"
          f"  y_lim {target.y_lim:.2f}  valid anchors {k}/{target.anchor_count}")

grid = np.vstack([np.hstack(tiles[:4]), np.hstack(tiles[4:])])
Image.fromarray(grid).save(OUT / "augmentation_gallery.png")
print(f"\nwrote gallery to {OUT / 'augmentation_gallery.png'}")
