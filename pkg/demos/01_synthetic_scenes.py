"""Generate a handful of procedural railway scenes and visualize their
ego-path annotations.

The generator builds a perspective ground plane with one labeled track
(always the one nearest the image centerline at the bottom row) plus
optional parallel distractor tracks, sleepers and clutter.  Every scene is
a pure function of its seed.

Outputs land in demos/output/scenes/.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from railpath.inference import EgoPathPrediction, render_overlay
from railpath.synthetic import SceneConfig, generate_synthetic_scene

OUT = Path(__file__).parent / "output" / "scenes"
OUT.mkdir(parents=True, exist_ok=True)

configs = {
    "straight": SceneConfig(curvature=[0.0, 0.0], track_count=[1, 1], clutter=0.2),
    "curved": SceneConfig(curvature=[0.25, 0.35], track_count=[1, 1], clutter=0.4),
    "multitrack": SceneConfig(track_count=[3, 4], clutter=0.6),
    "truncated": SceneConfig(truncate_prob=1.0, track_count=[2, 2]),
}

for name, cfg in configs.items():
    rng = np.random.default_rng(2024)
    image, ann = generate_synthetic_scene(rng, cfg, image_id=name)
    Image.fromarray(image).save(OUT / f"{name}.png")

    # Reuse the overlay renderer by treating the annotation as a prediction.
    pred = EgoPathPrediction(left=np.array(ann.left_rail.points),
                             right=np.array(ann.right_rail.points))
    Image.fromarray(render_overlay(image, pred)).save(OUT / f"{name}_annotated.png")
    top, bottom = ann.shared_span()
    print(f"{name:>11}: rails span y {bottom:.0f} -> {top:.0f}, "
          f"{len(ann.left_rail)} annotation points per rail")

print(f"\nwrote {2 * len(configs)} images to {OUT}")
