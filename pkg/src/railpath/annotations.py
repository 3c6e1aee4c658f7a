"""Rail-pair annotations: loading, validation, ego-pair selection, splits.

The annotation file is a JSON document mapping image id to the left/right
rail polylines of that image's ego path, with coordinates in original-image
pixels:

    {"img001": {"left_rail": [[x, y], ...], "right_rail": [[x, y], ...]}, ...}
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import GeometryError, Polyline, resample_at_rows, anchor_row_positions

log = logging.getLogger(__name__)

DEFAULT_ANCHOR_COUNT = 64
AMBIGUITY_MARGIN = 0.05  # of image width; selections tighter than this need review


class AnnotationError(ValueError):
    """Annotation data violates the schema or an invariant."""


@dataclass(frozen=True)
class EgoPathAnnotation:
    """Left/right rail polylines of one image's ego path."""

    image_id: str
    left_rail: Polyline
    right_rail: Polyline
    image_width: int
    image_height: int

    def __post_init__(self) -> None:
        reason = check_rail_pair(self.left_rail, self.right_rail, self.image_height)
        if reason is not None:
            raise AnnotationError(f"{self.image_id}: {reason}")

    def shared_span(self) -> tuple[float, float]:
        """(y_top, y_bottom) range where both rails are defined."""
        top = max(self.left_rail.y_top, self.right_rail.y_top)
        bottom = min(self.left_rail.y_bottom, self.right_rail.y_bottom)
        return top, bottom

    def mirrored(self) -> "EgoPathAnnotation":
        """Horizontally mirrored copy (x -> width-1-x, rails swapped)."""
        w = self.image_width
        flip = lambda pts: np.column_stack([w - 1.0 - pts[:, 0], pts[:, 1]])
        return EgoPathAnnotation(
            image_id=self.image_id,
            left_rail=self.right_rail.transformed(flip),
            right_rail=self.left_rail.transformed(flip),
            image_width=self.image_width,
            image_height=self.image_height,
        )


def check_rail_pair(left: Polyline, right: Polyline, image_height: float,
                    anchor_count: int = DEFAULT_ANCHOR_COUNT) -> str | None:
    """Reason the pair is invalid as an ego path, or None if it is fine.

    Checks the two invariants: left x <= right x wherever both rails are
    defined, and the shared y span covering at least two anchor rows of the
    default bottom-up grid.
    """
    top = max(left.y_top, right.y_top)
    bottom = min(left.y_bottom, right.y_bottom)
    if not (top < bottom):
        return "rail y-spans do not overlap"
    rows = anchor_row_positions(anchor_count, image_height)
    inside = (rows >= top) & (rows <= bottom)
    if int(inside.sum()) < 2:
        return "rail overlap covers fewer than 2 anchor rows"
    # Dense integer sampling of the shared span plus its endpoints.
    ys = np.unique(np.concatenate([np.arange(np.ceil(top), bottom), [top, bottom]]))
    lx = resample_at_rows(left, ys)
    rx = resample_at_rows(right, ys)
    ok = np.isfinite(lx) & np.isfinite(rx)
    if np.any(lx[ok] > rx[ok] + 1e-6):
        return "left rail crosses right rail"
    return None


@dataclass(frozen=True)
class PairScore:
    """Ranking record for one candidate rail pair."""

    index: int
    center_distance: float  # |bottom midpoint - image centerline|, pixels
    bottom_spacing: float   # rail spacing at the shared bottom row, pixels


def rank_ego_pairs(rail_pairs, dims: tuple[int, int]) -> list[PairScore]:
    """Score candidate pairs by bottom-midpoint distance to the centerline.

    Ties prefer the larger bottom spacing (the closer track).
    """
    width, _ = dims
    center = width / 2.0
    scores = []
    for idx, (left, right) in enumerate(rail_pairs):
        y = min(left.y_bottom, right.y_bottom)
        lx = float(resample_at_rows(left, [y])[0])
        rx = float(resample_at_rows(right, [y])[0])
        if not (np.isfinite(lx) and np.isfinite(rx)):
            continue
        lo, hi = min(lx, rx), max(lx, rx)
        scores.append(PairScore(idx, abs((lo + hi) / 2.0 - center), hi - lo))
    scores.sort(key=lambda s: (s.center_distance, -s.bottom_spacing, s.index))
    return scores


def auto_select_ego_pair(rail_pairs, dims: tuple[int, int]) -> int | None:
    """Index of the pair best aligned with the camera axis, or None if empty."""
    scores = rank_ego_pairs(rail_pairs, dims)
    return scores[0].index if scores else None


def selection_margin(rail_pairs, dims: tuple[int, int]) -> float | None:
    """Winning margin as a fraction of image width; None with < 2 candidates.

    Margins below AMBIGUITY_MARGIN flag the image for manual review.
    """
    scores = rank_ego_pairs(rail_pairs, dims)
    if len(scores) < 2:
        return None
    return (scores[1].center_distance - scores[0].center_distance) / dims[0]


def _polyline_from_json(raw, what: str) -> Polyline:
    try:
        return Polyline(np.asarray(raw, dtype=np.float64))
    except (GeometryError, ValueError, TypeError) as exc:
        raise AnnotationError(f"{what}: {exc}") from exc


def _resolve_dims(image_id: str, record: dict, image_dims) -> tuple[int, int]:
    if callable(image_dims):
        return image_dims(image_id)
    if isinstance(image_dims, dict):
        if image_id not in image_dims:
            raise AnnotationError(f"{image_id}: no image dimensions provided")
        return image_dims[image_id]
    if image_dims is not None:
        return image_dims
    # Fall back to a tight bound from the coordinates themselves.
    pts = np.asarray(record["left_rail"] + record["right_rail"], dtype=np.float64)
    return int(np.ceil(pts[:, 0].max())) + 1, int(np.ceil(pts[:, 1].max())) + 1


def load_annotations_report(path, image_dims=None) -> tuple[dict[str, EgoPathAnnotation], dict[str, str]]:
    """Load and validate an annotation file.

    Returns (valid annotations by id, rejection reasons by id).  A file that
    is not a JSON object of the expected layout raises AnnotationError
    listing the offending records.

    `image_dims` supplies image sizes as a (width, height) tuple applied to
    every record, a per-id mapping, or a callable; when omitted, sizes are
    inferred from the annotation extent.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise AnnotationError(f"{path}: top level must be an object mapping image ids")
    malformed = [
        str(k) for k, v in raw.items()
        if not (isinstance(v, dict) and "left_rail" in v and "right_rail" in v)
    ]
    if malformed:
        raise AnnotationError(f"{path}: records missing left_rail/right_rail: {sorted(malformed)}")

    annotations: dict[str, EgoPathAnnotation] = {}
    rejected: dict[str, str] = {}
    for image_id, record in raw.items():
        try:
            width, height = _resolve_dims(image_id, record, image_dims)
            annotations[image_id] = EgoPathAnnotation(
                image_id=image_id,
                left_rail=_polyline_from_json(record["left_rail"], "left_rail"),
                right_rail=_polyline_from_json(record["right_rail"], "right_rail"),
                image_width=int(width),
                image_height=int(height),
            )
        except AnnotationError as exc:
            rejected[image_id] = str(exc)
            log.warning("rejecting annotation %s: %s", image_id, exc)
    return annotations, rejected


def load_annotations(path, image_dims=None) -> dict[str, EgoPathAnnotation]:
    """Valid annotations from a file; invalid records are skipped (logged)."""
    annotations, _ = load_annotations_report(path, image_dims=image_dims)
    return annotations


def save_annotations(annotations: dict[str, EgoPathAnnotation], path) -> None:
    payload = {
        ann.image_id: {
            "left_rail": ann.left_rail.points.tolist(),
            "right_rail": ann.right_rail.points.tolist(),
        }
        for ann in annotations.values()
    }
    Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/val/test id lists produced by a seeded shuffle."""

    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self) -> None:
        groups = (set(self.train), set(self.val), set(self.test))
        total = len(self.train) + len(self.val) + len(self.test)
        if len(groups[0] | groups[1] | groups[2]) != total:
            raise AnnotationError("split groups are not disjoint")

    @property
    def all_ids(self) -> set[str]:
        return set(self.train) | set(self.val) | set(self.test)


def split_dataset(ids, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Deterministic shuffle of `ids` into train/val/test slices.

    Val and test sizes are the ratios rounded half-up; the remainder goes
    to train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise AnnotationError(f"ratios must be 3 non-negative values summing to 1, got {ratios}")
    ids = sorted(str(i) for i in ids)
    if not ids:
        raise AnnotationError("cannot split an empty id list")
    random.Random(seed).shuffle(ids)
    n = len(ids)
    n_val = int(n * ratios[1] + 0.5)
    n_test = int(n * ratios[2] + 0.5)
    n_train = n - n_val - n_test
    if n_train < 0:
        raise AnnotationError("rounding left no ids for training")
    return DatasetSplit(
        train=tuple(ids[:n_train]),
        val=tuple(ids[n_train:n_train + n_val]),
        test=tuple(ids[n_train + n_val:]),
        seed=seed,
        ratios=ratios,
    )


def save_split(split: DatasetSplit, path) -> None:
    payload = {
        "seed": split.seed,
        "ratios": list(split.ratios),
        "train": list(split.train),
        "val": list(split.val),
        "test": list(split.test),
    }
    Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")


def load_split(path) -> DatasetSplit:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return DatasetSplit(
        train=tuple(raw["train"]),
        val=tuple(raw["val"]),
        test=tuple(raw["test"]),
        seed=int(raw["seed"]),
        ratios=tuple(raw["ratios"]),
    )
