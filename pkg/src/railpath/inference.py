"""Decoding raw network outputs into paths, adaptive video cropping, and
latency benchmarking.

All decoders return results in original-image coordinates so a single IoU
evaluator serves every head type.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from .geometry import CropRegion, PathMask, rasterize_path

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


@dataclass(frozen=True)
class EgoPathPrediction:
    """Decoded path: per-anchor rail points in original-image pixels,
    ordered bottom-up and truncated at the predicted y-limit."""

    left: np.ndarray   # (K, 2)
    right: np.ndarray  # (K, 2)
    paradigm: str = "regression"

    def __post_init__(self) -> None:
        if self.left.shape != self.right.shape or (self.left.size and self.left.shape[1] != 2):
            raise ValueError(f"rail point arrays disagree: {self.left.shape} vs {self.right.shape}")

    @property
    def num_points(self) -> int:
        return self.left.shape[0]

    def is_empty(self) -> bool:
        return self.num_points == 0

    def extremes(self) -> np.ndarray:
        """(x_min, y_min, x_max, y_max) over both rails."""
        pts = np.vstack([self.left, self.right])
        return np.concatenate([pts.min(axis=0), pts.max(axis=0)])


def _empty_prediction(paradigm: str) -> EgoPathPrediction:
    z = np.zeros((0, 2))
    return EgoPathPrediction(left=z, right=z, paradigm=paradigm)


def decode_regression(vector, crop: CropRegion, dims: tuple[int, int]) -> EgoPathPrediction:
    """Decode a 2H+1 output vector relative to the crop it was produced from.

    Keeps anchors i <= y_lim * H (1-based, bottom-up) and maps normalized
    values to original-image pixels.
    """
    vec = np.asarray(torch.as_tensor(vector).detach().cpu(), dtype=np.float64).reshape(-1)
    if vec.shape[0] < 3 or vec.shape[0] % 2 == 0:
        raise ValueError(f"prediction vector must have odd length >= 3, got {vec.shape[0]}")
    H = (vec.shape[0] - 1) // 2
    y_lim = float(vec[-1])
    keep = int(np.floor(y_lim * H + 1e-9))
    keep = max(0, min(H, keep))
    if keep == 0:
        return _empty_prediction("regression")
    i = np.arange(1, keep + 1, dtype=np.float64)
    ys = crop.bottom - crop.height * (i / H)
    lx = crop.left + vec[:H][:keep] * crop.width
    rx = crop.left + vec[H:2 * H][:keep] * crop.width
    return EgoPathPrediction(left=np.column_stack([lx, ys]),
                             right=np.column_stack([rx, ys]),
                             paradigm="regression")


def decode_classification(grid, crop: CropRegion, dims: tuple[int, int]) -> EgoPathPrediction:
    """Per-(rail, row) argmax decoding of a (C, H, W+1) logit grid.

    A row where any rail's argmax lands on the background class ends the
    path; a single isolated background row below valid rows is tolerated
    (its x comes from its neighbors).  Column ties resolve to the lower
    index; columns map to bin-center x.
    """
    g = np.asarray(torch.as_tensor(grid).detach().cpu(), dtype=np.float64)
    if g.ndim != 3 or g.shape[0] < 2:
        raise ValueError(f"expected a (C, H, W+1) grid, got {g.shape}")
    C, H, n_cols = g.shape
    W = n_cols - 1
    cols = np.argmax(g, axis=2)                # (C, H); first max wins ties
    valid = np.all(cols != W, axis=0)          # (H,)
    smoothed = valid.copy()
    for i in range(1, H - 1):                  # one-row median filter
        smoothed[i] = np.median([valid[i - 1], valid[i], valid[i + 1]]) >= 0.5
    run = int(np.argmin(smoothed)) if not smoothed.all() else H
    if run == 0:
        return _empty_prediction("classification")
    x_norm = (cols[:2].astype(np.float64) + 0.5) / W
    # Fill tolerated background rows from their valid neighbors.
    rows_idx = np.arange(H)
    for r in range(2):
        good = valid & (rows_idx < run)
        if good.sum() >= 2:
            bad = ~valid & (rows_idx < run)
            x_norm[r, bad] = np.interp(rows_idx[bad], rows_idx[good], x_norm[r, good])
    i = np.arange(1, run + 1, dtype=np.float64)
    ys = crop.bottom - crop.height * (i / H)
    lx = crop.left + x_norm[0, :run] * crop.width
    rx = crop.left + x_norm[1, :run] * crop.width
    lo = np.minimum(lx, rx)
    hi = np.maximum(lx, rx)
    return EgoPathPrediction(left=np.column_stack([lo, ys]),
                             right=np.column_stack([hi, ys]),
                             paradigm="classification")


def decode_segmentation(logits, crop: CropRegion, dims: tuple[int, int]) -> PathMask:
    """Threshold mask logits at probability 0.5, rescale to the crop size and
    embed into the original-image frame."""
    m = np.asarray(torch.as_tensor(logits).detach().cpu(), dtype=np.float64)
    m = m.reshape(m.shape[-2], m.shape[-1])
    binary = (m > 0).astype(np.uint8)  # sigmoid(x) > 0.5  <=>  x > 0
    width, height = dims
    out = np.zeros((height, width), dtype=np.uint8)
    rows, cols = crop.pixel_slices()
    ch = rows.stop - rows.start
    cw = cols.stop - cols.start
    if ch > 0 and cw > 0:
        resized = (np.asarray(Image.fromarray(binary * np.uint8(255), mode="L")
                              .resize((cw, ch), Image.NEAREST)) >= 128).astype(np.uint8)
        r0, r1 = max(0, rows.start), min(height, rows.stop)
        c0, c1 = max(0, cols.start), min(width, cols.stop)
        if r1 > r0 and c1 > c0:
            out[r0:r1, c0:c1] = resized[r0 - rows.start:r1 - rows.start,
                                        c0 - cols.start:c1 - cols.start]
    return PathMask(out)


def prediction_path_mask(prediction: EgoPathPrediction, dims: tuple[int, int]) -> PathMask:
    """Rasterize a decoded path for IoU evaluation.

    The polygon extends one anchor spacing below the lowest point pair: the
    inference crop keeps the rail base on its bottom border, so the path
    reaches the frame bottom even though anchor 1 sits 1/H above it.
    """
    if prediction.num_points < 2:
        return PathMask.empty(*dims)
    lx = prediction.left[:, 0]
    rx = prediction.right[:, 0]
    rows = prediction.left[:, 1]
    dy = rows[0] - rows[1]
    lx = np.concatenate([[lx[0] + (lx[0] - lx[1])], lx])
    rx = np.concatenate([[rx[0] + (rx[0] - rx[1])], rx])
    rows = np.concatenate([[rows[0] + dy], rows])
    return rasterize_path(lx, rx, rows, len(rows), dims)


def encode_target_vector(target) -> np.ndarray:
    """2H+1 vector representation of a trajectory target (decode inverse)."""
    return np.concatenate([target.x[0], target.x[1], [target.y_lim]])


@dataclass
class AdaptiveCropConfig:
    smoothing: float = 0.1      # exponential-average factor for new extremes
    global_blend: float = 0.2   # weight of the cumulative average (anti-collapse)
    margin: float = 0.15        # padding around the blended extremes
    min_size: float = 0.2       # minimum crop width/height, fraction of image


@dataclass(frozen=True)
class CropState:
    """Per-stream adaptive cropping state; use one state per video."""

    image_width: int
    image_height: int
    config: AdaptiveCropConfig = field(default_factory=AdaptiveCropConfig)
    crop: CropRegion | None = None
    running: np.ndarray | None = None     # exponential average of extremes
    global_sum: np.ndarray | None = None  # cumulative sum of extremes
    count: int = 0
    frames: int = 0

    def current_crop(self) -> CropRegion:
        if self.crop is None:
            return CropRegion(0.0, 0.0, float(self.image_width), float(self.image_height))
        return self.crop


def initial_crop_state(image_dims: tuple[int, int],
                       config: AdaptiveCropConfig | None = None) -> CropState:
    w, h = image_dims
    return CropState(image_width=w, image_height=h, config=config or AdaptiveCropConfig())


def adaptive_crop_update(state: CropState, prediction: EgoPathPrediction) -> CropState:
    """Refine the crop around the running average of predicted path extremes.

    Empty predictions only advance the frame counter.  The new crop blends
    the exponential running average with the cumulative global average,
    expands by the configured margins, and never shrinks below the minimum
    size or leaves the image.
    """
    if prediction.is_empty():
        return dataclasses.replace(state, frames=state.frames + 1)
    e = prediction.extremes()
    cfg = state.config
    running = e if state.running is None else (1 - cfg.smoothing) * state.running + cfg.smoothing * e
    global_sum = e if state.global_sum is None else state.global_sum + e
    count = state.count + 1
    blended = (1 - cfg.global_blend) * running + cfg.global_blend * (global_sum / count)

    x0, y0, x1, y1 = blended
    mx = cfg.margin * max(x1 - x0, 1.0)
    my = cfg.margin * max(y1 - y0, 1.0)
    crop = _bounded_crop(x0 - mx, y0 - my, x1 + mx, y1 + my,
                         state.image_width, state.image_height, cfg.min_size)
    return dataclasses.replace(state, crop=crop, running=running,
                               global_sum=global_sum, count=count, frames=state.frames + 1)


def _bounded_crop(x0: float, y0: float, x1: float, y1: float,
                  img_w: int, img_h: int, min_size: float) -> CropRegion:
    min_w = min_size * img_w
    min_h = min_size * img_h
    if x1 - x0 < min_w:
        cx = (x0 + x1) / 2
        x0, x1 = cx - min_w / 2, cx + min_w / 2
    if y1 - y0 < min_h:
        cy = (y0 + y1) / 2
        y0, y1 = cy - min_h / 2, cy + min_h / 2
    # Shift inside the image before clamping so the minimum size survives.
    if x0 < 0:
        x1, x0 = x1 - x0, 0.0
    if y0 < 0:
        y1, y0 = y1 - y0, 0.0
    if x1 > img_w:
        x0, x1 = x0 - (x1 - img_w), float(img_w)
    if y1 > img_h:
        y0, y1 = y0 - (y1 - img_h), float(img_h)
    return CropRegion(max(x0, 0.0), max(y0, 0.0), min(x1, float(img_w)), min(y1, float(img_h)))


@dataclass(frozen=True)
class LatencyReport:
    mean_ms: float
    std_ms: float
    percentiles: dict[str, float]
    iterations: int
    warmup: int
    device: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def benchmark_latency(model, iterations: int = 50, warmup: int = 10,
                      input_size: int | None = None, device: str = "cpu",
                      batch_size: int = 1) -> LatencyReport:
    """Forward-pass latency, pre/post-processing excluded.

    The input tensor is created once up front; warmup passes are discarded;
    timing synchronizes the device when an accelerator is used.
    """
    if iterations <= 0:
        raise ValueError("iterations must be positive")
    size = input_size or getattr(model, "input_size", 512)
    model = model.to(device)
    model.eval()
    x = torch.randn(batch_size, 3, size, size, device=device)

    def sync():
        if device.startswith("cuda"):
            torch.cuda.synchronize(device)

    samples = []
    with torch.no_grad():
        for _ in range(warmup):
            model(x)
        sync()
        for _ in range(iterations):
            t0 = time.perf_counter()
            model(x)
            sync()
            samples.append((time.perf_counter() - t0) * 1000.0)
    arr = np.asarray(samples)
    return LatencyReport(
        mean_ms=float(arr.mean()),
        std_ms=float(arr.std()),
        percentiles={f"p{p}": float(np.percentile(arr, p)) for p in (50, 90, 99)},
        iterations=iterations,
        warmup=warmup,
        device=device,
    )


def render_overlay(image: np.ndarray, prediction: EgoPathPrediction,
                   fill=(0, 200, 80, 90), rail=(0, 230, 90, 255), width: int = 3) -> np.ndarray:
    """Predicted path drawn over a copy of the image; empty predictions
    return the image unchanged."""
    if prediction.is_empty():
        return image.copy()
    base = Image.fromarray(image).convert("RGBA")
    layer = Image.new("RGBA", base.size, (0, 0, 0, 0))
    draw = ImageDraw.Draw(layer)
    poly = [tuple(p) for p in prediction.left] + [tuple(p) for p in prediction.right[::-1]]
    if len(poly) >= 3:
        draw.polygon(poly, fill=fill)
    for pts in (prediction.left, prediction.right):
        draw.line([tuple(p) for p in pts], fill=rail, width=width)
    return np.asarray(Image.alpha_composite(base, layer).convert("RGB"))


def mask_extremes_prediction(mask: PathMask) -> EgoPathPrediction:
    """Bounding-box pseudo-prediction of a mask, for adaptive crop updates
    on segmentation streams."""
    ys, xs = np.nonzero(mask.data)
    if ys.size == 0:
        return _empty_prediction("segmentation")
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    return EgoPathPrediction(left=np.array([[x0, y1], [x0, y0]]),
                             right=np.array([[x1, y1], [x1, y0]]),
                             paradigm="segmentation")


def iter_frames(source):
    """Yield (name, image) frames from an image directory or a video file."""
    src = Path(source)
    if src.is_dir():
        files = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
        for p in files:
            yield p.stem, np.asarray(Image.open(p).convert("RGB"))
        return
    try:
        import cv2
    except ImportError as exc:
        raise RuntimeError("reading video containers requires opencv-python-headless "
                           "(pip install railpath[video])") from exc
    cap = cv2.VideoCapture(str(src))
    idx = 0
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            yield f"frame_{idx:06d}", frame[:, :, ::-1].copy()
            idx += 1
    finally:
        cap.release()
