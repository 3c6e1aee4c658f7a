"""Crop-based training augmentation and regression-target construction.

The crop policy follows the track-focused recipe: take the joint bounding
box of both rails, extend it horizontally so the rail base midpoint is
centered, add fixed margins, then shift the left/top/right borders by
clipped normal draws.  The bottom border stays on the rail base row and the
base points of both rails are guaranteed to stay strictly inside the crop.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image
from torchvision.transforms import functional as TF

from .annotations import EgoPathAnnotation
from .geometry import CropRegion, Polyline, anchor_row_positions, resample_at_rows

DEFAULT_ANCHOR_COUNT = 64


class AugmentationError(RuntimeError):
    """Sample generation failed after exhausting crop retries."""


@dataclass
class AugmentationConfig:
    # Fixed margins added around the centered ROI, fractions of its size.
    margin_left: float = 0.10
    margin_top: float = 0.10
    margin_right: float = 0.10
    # Std devs of the stochastic border shifts, fractions of ROI size;
    # draws are clipped at +-2 sigma before constraint enforcement.
    shift_std_left: float = 0.10
    shift_std_top: float = 0.15
    shift_std_right: float = 0.10
    # Photometric jitter ranges and flip probability.
    brightness: float = 0.3
    contrast: float = 0.3
    saturation: float = 0.3
    hue: float = 0.05
    flip_prob: float = 0.5
    # Square side of the network input, and the anchor grid size.
    working_size: int = 512
    anchor_count: int = DEFAULT_ANCHOR_COUNT
    # Rails ending above the crop bottom are extrapolated down at most this
    # fraction of the crop height; beyond it the bottom anchors are masked.
    max_extrapolation: float = 0.10
    crop_retries: int = 8

    def __post_init__(self) -> None:
        for name in ("shift_std_left", "shift_std_top", "shift_std_right"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.working_size <= 0:
            raise ValueError("working_size must be positive")
        if not 1 <= self.anchor_count:
            raise ValueError("anchor_count must be >= 1")

    def deterministic(self) -> "AugmentationConfig":
        """Copy with all stochastic parts disabled (validation / debugging)."""
        return dataclasses.replace(
            self, shift_std_left=0.0, shift_std_top=0.0, shift_std_right=0.0,
            brightness=0.0, contrast=0.0, saturation=0.0, hue=0.0, flip_prob=0.0,
        )

    def evaluation(self) -> "AugmentationConfig":
        """Copy keeping the stochastic crop but no photometric jitter or flip."""
        return dataclasses.replace(self, brightness=0.0, contrast=0.0, saturation=0.0,
                                   hue=0.0, flip_prob=0.0)


@dataclass(frozen=True)
class TrajectoryTarget:
    """Per-anchor regression ground truth for one training sample.

    `x` is a (2, H) matrix of x values normalized by the frame width (row 0
    left rail, row 1 right rail); values may leave [0, 1] where rails exit
    the crop laterally.  `y_lim` is the annotated extent as a bottom-up
    fraction of the frame height, and `mask` flags the anchors carrying
    real data.
    """

    x: np.ndarray
    y_lim: float
    mask: np.ndarray

    def __post_init__(self) -> None:
        if self.x.shape != (2, self.mask.shape[0]):
            raise ValueError(f"x shape {self.x.shape} does not match mask {self.mask.shape}")
        if not 0.0 <= self.y_lim <= 1.0:
            raise ValueError(f"y_lim {self.y_lim} outside [0, 1]")

    @property
    def anchor_count(self) -> int:
        return self.mask.shape[0]

    def valid_prefix(self) -> int:
        """Length of the contiguous valid anchor run from the bottom."""
        idx = np.flatnonzero(~self.mask)
        return int(idx[0]) if idx.size else self.anchor_count


def _rail_base_points(annotation: EgoPathAnnotation) -> np.ndarray:
    return np.array([annotation.left_rail.points[0], annotation.right_rail.points[0]])


def compute_crop(annotation: EgoPathAnnotation, rng: np.random.Generator,
                 config: AugmentationConfig) -> CropRegion:
    """Draw one training crop; falls back to the full image when the
    centering/margin constraints cannot hold."""
    img_w, img_h = annotation.image_width, annotation.image_height
    pts = np.vstack([annotation.left_rail.points, annotation.right_rail.points])
    box_l, box_t = pts.min(axis=0)
    box_r, box_b = pts.max(axis=0)

    base = _rail_base_points(annotation)
    mid = float(base[:, 0].mean())
    half = max(mid - box_l, box_r - mid)
    roi_l, roi_r = mid - half, mid + half
    roi_w = max(roi_r - roi_l, 1.0)
    roi_h = max(box_b - box_t, 1.0)

    left = roi_l - config.margin_left * roi_w
    right = roi_r + config.margin_right * roi_w
    top = box_t - config.margin_top * roi_h

    def draw(std: float, size: float) -> float:
        if std <= 0:
            return 0.0
        return float(np.clip(rng.normal(0.0, std), -2.0 * std, 2.0 * std)) * size

    left += draw(config.shift_std_left, roi_w)
    right += draw(config.shift_std_right, roi_w)
    top += draw(config.shift_std_top, roi_h)

    # Integer pixel box; bottom fixed to the row containing the rail base.
    bottom = min(float(img_h), np.floor(box_b) + 1.0)
    left = np.floor(left)
    right = np.ceil(right)
    top = np.floor(top)

    # Constraint: the base pixels of both rails stay inside the half-open
    # crop box regardless of the shift draws.
    base_lo, base_hi = base[:, 0].min(), base[:, 0].max()
    left = min(left, np.floor(base_lo))
    right = max(right, np.floor(base_hi) + 1.0)
    top = min(top, np.floor(base[:, 1].min()) - 1.0)

    left = max(left, 0.0)
    right = min(right, float(img_w))
    top = max(top, 0.0)

    feasible = (left <= base_lo and right > base_hi and right - left >= 2 and bottom - top >= 2)
    if not feasible:
        return CropRegion(0.0, 0.0, float(img_w), float(img_h))
    return CropRegion(left, top, right, bottom)


def photometric_jitter(image: np.ndarray, rng: np.random.Generator,
                       config: AugmentationConfig) -> np.ndarray:
    """Brightness/contrast/saturation/hue adjustments; geometry untouched."""
    factors = {
        "brightness": rng.uniform(max(0.0, 1 - config.brightness), 1 + config.brightness),
        "contrast": rng.uniform(max(0.0, 1 - config.contrast), 1 + config.contrast),
        "saturation": rng.uniform(max(0.0, 1 - config.saturation), 1 + config.saturation),
        "hue": rng.uniform(-config.hue, config.hue),
    }
    if all(v == 1.0 for k, v in factors.items() if k != "hue") and factors["hue"] == 0.0:
        return image
    t = torch.from_numpy(np.array(image)).permute(2, 0, 1)
    if factors["brightness"] != 1.0:
        t = TF.adjust_brightness(t, factors["brightness"])
    if factors["contrast"] != 1.0:
        t = TF.adjust_contrast(t, factors["contrast"])
    if factors["saturation"] != 1.0:
        t = TF.adjust_saturation(t, factors["saturation"])
    if factors["hue"] != 0.0:
        t = TF.adjust_hue(t, factors["hue"])
    return t.permute(1, 2, 0).numpy()


def horizontal_flip(image: np.ndarray, annotation: EgoPathAnnotation,
                    rng: np.random.Generator, p: float) -> tuple[np.ndarray, EgoPathAnnotation]:
    """With probability p mirror the image and annotation (rails swap sides)."""
    if p <= 0 or rng.uniform() >= p:
        return image, annotation
    return np.ascontiguousarray(image[:, ::-1]), annotation.mirrored()


def _extended_to_bottom(rail: Polyline, frame_h: float, cap: float) -> Polyline | None:
    """Rail extended to the frame bottom by linear extrapolation of its two
    lowest points; None when the gap exceeds `cap` pixels."""
    if rail.y_bottom >= frame_h:
        return rail
    gap = frame_h - rail.y_bottom
    if gap > cap:
        return None
    p0, p1 = rail.points[0], rail.points[1]  # bottom-most two points
    dy = p0[1] - p1[1]
    slope = (p0[0] - p1[0]) / dy if dy != 0 else 0.0
    foot = np.array([p0[0] + slope * (frame_h - p0[1]), frame_h])
    return Polyline(np.vstack([foot, rail.points]))


def build_sample(image: np.ndarray, annotation: EgoPathAnnotation,
                 rng: np.random.Generator, config: AugmentationConfig
                 ) -> tuple[np.ndarray, TrajectoryTarget, CropRegion]:
    """One augmented training sample: crop, resize, jitter, maybe flip, and
    the trajectory target resampled at the anchor rows.

    Returns the working-resolution image, the target, and the crop used.
    Crops leaving fewer than two valid anchors are redrawn up to
    `config.crop_retries` times before raising AugmentationError.
    """
    last_reason = "no attempt made"
    for _ in range(max(1, config.crop_retries)):
        crop = compute_crop(annotation, rng, config)
        result = _materialize(image, annotation, crop, rng, config)
        if isinstance(result, str):
            last_reason = result
            continue
        return result
    raise AugmentationError(f"could not build sample for {annotation.image_id}: {last_reason}")


def _materialize(image, annotation, crop, rng, config):
    size = config.working_size
    rows, cols = crop.pixel_slices()
    patch = image[rows, cols]
    if patch.shape[0] < 2 or patch.shape[1] < 2:
        return "degenerate crop"
    working = np.asarray(Image.fromarray(patch).resize((size, size), Image.BILINEAR))

    sx = size / crop.width
    sy = size / crop.height
    to_work = lambda pts: np.column_stack([(pts[:, 0] - crop.left) * sx, (pts[:, 1] - crop.top) * sy])
    crop_ann = EgoPathAnnotation(
        image_id=annotation.image_id,
        left_rail=annotation.left_rail.transformed(to_work),
        right_rail=annotation.right_rail.transformed(to_work),
        image_width=size,
        image_height=size,
    )

    working = photometric_jitter(working, rng, config)
    working, crop_ann = horizontal_flip(working, crop_ann, rng, config.flip_prob)

    target = _build_target(crop_ann, config)
    if isinstance(target, str):
        return target
    if int(target.mask.sum()) < 2:
        return "fewer than 2 valid anchors"
    return working, target, crop


def _build_target(crop_ann: EgoPathAnnotation, config: AugmentationConfig):
    size = float(config.working_size)
    H = config.anchor_count
    cap = config.max_extrapolation * size

    left = _extended_to_bottom(crop_ann.left_rail, size, cap)
    right = _extended_to_bottom(crop_ann.right_rail, size, cap)
    if left is None or right is None:
        # Over-long extrapolation: keep the rails as-is and let the anchors
        # below their span drop out of the mask.
        left = left or crop_ann.left_rail
        right = right or crop_ann.right_rail

    y_top_shared = max(left.y_top, right.y_top)
    y_lim = float(np.clip((size - y_top_shared) / size, 0.0, 1.0))
    if y_lim <= 0.0:
        return "annotation entirely below the crop"

    rows = anchor_row_positions(H, size)
    lx = resample_at_rows(left, rows)
    rx = resample_at_rows(right, rows)

    idx = np.arange(1, H + 1, dtype=np.float64)
    rule = idx <= y_lim * H
    # Float-boundary rescue: an anchor the y-limit rule declares valid can
    # land a hair outside the rail span; clamp it onto the span endpoint.
    for arr, rail in ((lx, left), (rx, right)):
        bad = rule & ~np.isfinite(arr)
        if bad.any():
            near = (rows[bad] >= rail.y_top - 0.5) & (rows[bad] <= rail.y_bottom + 0.5)
            clamped = np.clip(rows[bad], rail.y_top, rail.y_bottom)
            arr[bad] = np.where(near, resample_at_rows(rail, clamped), np.nan)
    mask = rule & np.isfinite(lx) & np.isfinite(rx)

    # Swap inverted pairs per row rather than rejecting them.
    lo = np.fmin(lx, rx)
    hi = np.fmax(lx, rx)

    x = np.stack([lo, hi]) / size
    x = _fill_placeholders(x, mask)
    return TrajectoryTarget(x=x, y_lim=y_lim, mask=mask)


def _fill_placeholders(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Carry the last valid value upward (and the first valid downward) into
    masked anchors so targets stay finite; these values never reach the loss."""
    out = x.copy()
    valid = np.flatnonzero(mask)
    if valid.size == 0:
        return np.nan_to_num(out, nan=0.5)
    positions = np.arange(mask.shape[0])
    last_below = valid[np.clip(np.searchsorted(valid, positions, side="right") - 1, 0, valid.size - 1)]
    source = np.where(positions < valid[0], valid[0], last_below)
    out[:, ~mask] = out[:, source[~mask]]
    return out


def anchor_pixel_points(target: TrajectoryTarget, frame_size: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(left_xs, right_xs, rows) of the target in frame pixel coordinates."""
    rows = anchor_row_positions(target.anchor_count, frame_size)
    return target.x[0] * frame_size, target.x[1] * frame_size, rows


def target_path_mask(target: TrajectoryTarget, frame_size: int):
    """Rasterize a trajectory target over its own frame.

    The polygon covers the valid anchors, closes at the exact y-limit row
    (the y-limit is part of the target), and extends one anchor spacing
    down to the frame bottom, where the crop policy pins the rail base.
    """
    from .geometry import rasterize_path

    valid = np.flatnonzero(target.mask)
    if valid.size < 2:
        return rasterize_path([], [], [], 0, (frame_size, frame_size))
    first = int(valid[0])
    run = first + int(np.argmin(target.mask[first:])) if not target.mask[first:].all() \
        else target.anchor_count
    lx_all, rx_all, rows_all = anchor_pixel_points(target, frame_size)
    lx = list(lx_all[first:run])
    rx = list(rx_all[first:run])
    rows = list(rows_all[first:run])
    if len(rows) < 2:
        return rasterize_path([], [], [], 0, (frame_size, frame_size))
    if first == 0:
        # Anchor 1 sits 1/H above the bottom edge; close the polygon there.
        dy = rows[0] - rows[1]
        lx.insert(0, lx[0] + (lx[0] - lx[1]))
        rx.insert(0, rx[0] + (rx[0] - rx[1]))
        rows.insert(0, rows[0] + dy)
    y_top = frame_size * (1.0 - target.y_lim)
    if rows[-1] - y_top > 1e-9:
        t = (y_top - rows[-1]) / (rows[-1] - rows[-2])
        lx.append(lx[-1] + (lx[-1] - lx[-2]) * t)
        rx.append(rx[-1] + (rx[-1] - rx[-2]) * t)
        rows.append(y_top)
    return rasterize_path(np.array(lx), np.array(rx), np.array(rows), len(rows),
                          (frame_size, frame_size))
