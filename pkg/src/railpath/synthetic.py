"""Procedural railway scenes with exact rail annotations.

Desk-scale stand-in for real forward-facing footage: a perspective ground
plane, one labeled track whose base sits nearest the image centerline, and
optional parallel distractor tracks, sleepers and clutter.  Everything is
drawn from an explicit random generator, so a fixed seed reproduces the
scene bit for bit.
"""

from __future__ import annotations


from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

from .annotations import EgoPathAnnotation
from .geometry import Polyline


@dataclass
class SceneConfig:
    width: int = 640
    height: int = 360
    curvature: list[float] = field(default_factory=lambda: [-0.3, 0.3])
    track_count: list[int] = field(default_factory=lambda: [1, 3])
    clutter: float = 0.5
    truncate_prob: float = 0.25
    annotation_points: int = 24


@dataclass(frozen=True)
class _Track:
    base_x: float      # rail-pair center at the image bottom row
    vanish_x: float    # shared vanishing point x
    gauge: float       # rail spacing at the bottom row, pixels
    curve: float       # lateral drift toward the horizon, fraction of width
    s_min: float       # depth parameter where the track's visibility ends
    base_y: float
    horizon_y: float
    width: int

    def center_x(self, s: np.ndarray) -> np.ndarray:
        drift = self.curve * self.width * (1.0 - s) ** 2
        return self.vanish_x + (self.base_x - self.vanish_x) * s + drift

    def y_of(self, s: np.ndarray) -> np.ndarray:
        return self.horizon_y + s * (self.base_y - self.horizon_y)

    def rails(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c = self.center_x(s)
        half = self.gauge * s / 2.0
        y = self.y_of(s)
        return np.column_stack([c - half, y]), np.column_stack([c + half, y])


def _background(rng: np.random.Generator, cfg: SceneConfig, horizon: float) -> np.ndarray:
    h, w = cfg.height, cfg.width
    img = np.zeros((h, w, 3), dtype=np.float32)
    rows = np.arange(h, dtype=np.float32)[:, None, None]
    sky_t = np.clip(rows / max(horizon, 1.0), 0.0, 1.0)
    sky = np.array([168, 186, 205], np.float32) * (1 - sky_t) + np.array([205, 213, 221], np.float32) * sky_t
    gnd_t = np.clip((rows - horizon) / max(h - horizon, 1.0), 0.0, 1.0)
    gnd = np.array([126, 116, 104], np.float32) * (1 - gnd_t) + np.array([98, 92, 84], np.float32) * gnd_t
    img[:] = np.where(rows < horizon, sky, gnd)
    img += rng.normal(0.0, 5.0, size=(h, w, 1)).astype(np.float32)
    return img


def _scatter_clutter(draw: ImageDraw.ImageDraw, rng: np.random.Generator,
                     cfg: SceneConfig, horizon: float) -> None:
    count = int(cfg.clutter * 350)
    for _ in range(count):
        x = rng.uniform(0, cfg.width)
        y = rng.uniform(horizon + 2, cfg.height)
        r = rng.uniform(0.5, 2.2)
        shade = int(rng.uniform(70, 150))
        draw.ellipse([x - r, y - r, x + r, y + r], fill=(shade, shade - 5, shade - 10))


def _draw_track(draw: ImageDraw.ImageDraw, rng: np.random.Generator, track: _Track) -> None:
    # Sleepers first (under the rails), evenly pitched in ground distance.
    sleeper = (72 + int(rng.uniform(-8, 8)), 62, 50)
    pitch = 0.040
    k = 0
    while True:
        s = 1.0 / (1.0 + pitch * k)
        k += 1
        if s < track.s_min:
            break
        y = float(track.y_of(np.array([s]))[0])
        cx = float(track.center_x(np.array([s]))[0])
        half = 0.62 * track.gauge * s
        th = max(1, int(round(3.5 * s)))
        draw.line([(cx - half, y), (cx + half, y)], fill=sleeper, width=th)
    # Rails on top, stroke width shrinking with depth.
    s_vals = np.linspace(1.0, track.s_min, 60)
    left, right = track.rails(s_vals)
    steel = (44, 45, 50)
    glint = (96, 97, 102)
    for rail in (left, right):
        for a, b, s in zip(rail[:-1], rail[1:], s_vals[:-1]):
            w = max(1, int(round(3.2 * s)))
            draw.line([tuple(a), tuple(b)], fill=steel, width=w)
            if w >= 3:
                draw.line([tuple(a), tuple(b)], fill=glint, width=1)


def generate_synthetic_scene(rng: np.random.Generator, config: SceneConfig | None = None,
                             image_id: str = "synthetic") -> tuple[np.ndarray, EgoPathAnnotation]:
    """Render one scene and its exact ego-path annotation.

    The ego track is always the one whose rail-pair midpoint at the bottom
    row lies nearest the vertical centerline; distractor tracks are placed
    strictly farther out.
    """
    cfg = config or SceneConfig()
    w, h = cfg.width, cfg.height
    horizon = h * rng.uniform(0.28, 0.40)
    vanish_x = w * (0.5 + rng.uniform(-0.10, 0.10))
    base_y = h - 1 - rng.uniform(0.0, 5.0)
    gauge = w * rng.uniform(0.17, 0.26)
    ego_off = rng.uniform(-0.10, 0.10)
    curve = rng.uniform(cfg.curvature[0], cfg.curvature[1])
    if rng.uniform() < cfg.truncate_prob:
        s_min = rng.uniform(0.25, 0.55)
    else:
        s_min = rng.uniform(0.05, 0.12)

    ego = _Track(
        base_x=w * (0.5 + ego_off), vanish_x=vanish_x, gauge=gauge, curve=curve,
        s_min=s_min, base_y=base_y, horizon_y=horizon, width=w,
    )

    n_tracks = int(rng.integers(cfg.track_count[0], cfg.track_count[1] + 1))
    distractors: list[_Track] = []
    side = 1.0 if rng.uniform() < 0.5 else -1.0
    per_side = {1.0: 0, -1.0: 0}
    ego_dist = abs(ego.base_x - w / 2.0)
    for _ in range(n_tracks - 1):
        per_side[side] += 1
        offset = gauge * (1.25 + 0.3 * rng.uniform()) * per_side[side]
        base_x = ego.base_x + side * offset
        side = -side
        if abs(base_x - w / 2.0) < ego_dist + 0.06 * w:
            continue  # would compete with the ego track for the centerline
        distractors.append(_Track(
            base_x=base_x, vanish_x=vanish_x + w * rng.uniform(-0.02, 0.02),
            gauge=gauge, curve=curve + rng.uniform(-0.05, 0.05),
            s_min=rng.uniform(0.05, 0.15), base_y=base_y, horizon_y=horizon, width=w,
        ))

    base = np.clip(_background(rng, cfg, horizon), 0, 255).astype(np.uint8)
    canvas = Image.fromarray(base)
    draw = ImageDraw.Draw(canvas)
    if cfg.clutter > 0:
        _scatter_clutter(draw, rng, cfg, horizon)
    for track in distractors:
        _draw_track(draw, rng, track)
    _draw_track(draw, rng, ego)
    image = np.asarray(canvas)

    s_pts = np.linspace(1.0, ego.s_min, cfg.annotation_points)
    left_pts, right_pts = ego.rails(s_pts)
    annotation = EgoPathAnnotation(
        image_id=image_id,
        left_rail=Polyline(left_pts),
        right_rail=Polyline(right_pts),
        image_width=w,
        image_height=h,
    )
    return image, annotation


def generate_dataset(seed: int, count: int, config: SceneConfig | None = None,
                     prefix: str = "scene") -> tuple[dict[str, np.ndarray], dict[str, EgoPathAnnotation]]:
    """`count` scenes with stable ids, each from an independent seed stream."""
    cfg = config or SceneConfig()
    images: dict[str, np.ndarray] = {}
    annotations: dict[str, EgoPathAnnotation] = {}
    for idx in range(count):
        image_id = f"{prefix}_{idx:04d}"
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        image, ann = generate_synthetic_scene(rng, cfg, image_id=image_id)
        images[image_id] = image
        annotations[image_id] = ann
    return images, annotations
