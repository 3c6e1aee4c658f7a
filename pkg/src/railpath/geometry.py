"""Learning-free geometric primitives for rail path handling.

Conventions used throughout the package:

* Image coordinates have x growing rightward and y growing downward, so the
  image *bottom* is the largest y.  Polylines and anchor rows are ordered
  bottom-to-top.
* The center of the pixel at (row r, col c) lies at continuous coordinates
  (x = c + 0.5, y = r + 0.5).  Polygon fills are even-odd with half-open
  spans: a pixel belongs to a mask iff its center is inside the polygon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image


class GeometryError(ValueError):
    """A geometric precondition was violated."""


class Polyline:
    """Ordered 2D point sequence in image coordinates.

    On construction the points are normalized: sorted bottom-to-top
    (decreasing y) and duplicate-y points coalesced by averaging their x.
    The normalized sequence must contain at least two distinct y values,
    and every coordinate must be finite.
    """

    __slots__ = ("points",)

    def __init__(self, points) -> None:
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise GeometryError(f"polyline needs an (N>=2, 2) point array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("polyline contains non-finite coordinates")
        order = np.argsort(-pts[:, 1], kind="stable")
        pts = pts[order]
        ys, inverse = np.unique(pts[:, 1], return_inverse=True)
        if ys.shape[0] < 2:
            raise GeometryError("degenerate polyline: fewer than 2 distinct y values")
        if ys.shape[0] != pts.shape[0]:
            xs = np.zeros_like(ys)
            counts = np.bincount(inverse, minlength=ys.shape[0])
            np.add.at(xs, inverse, pts[:, 0])
            pts = np.column_stack([xs / counts, ys])[::-1]  # unique() sorts ascending
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        self.points = pts

    @property
    def xs(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def ys(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def y_bottom(self) -> float:
        return float(self.points[0, 1])

    @property
    def y_top(self) -> float:
        return float(self.points[-1, 1])

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, Polyline) and np.array_equal(self.points, other.points)

    def __repr__(self) -> str:
        return f"Polyline({len(self)} pts, y {self.y_bottom:.1f}->{self.y_top:.1f})"

    def transformed(self, fn) -> "Polyline":
        """New polyline with `fn` applied to the (N, 2) point array."""
        return Polyline(fn(np.array(self.points)))


@dataclass(frozen=True)
class CropRegion:
    """Axis-aligned rectangle in original-image coordinates.

    Treated as the half-open pixel box [left, right) x [top, bottom).
    """

    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self) -> None:
        if not (self.left < self.right and self.top < self.bottom):
            raise GeometryError(f"empty crop region {self!r}")
        for v in (self.left, self.top, self.right, self.bottom):
            if not np.isfinite(v):
                raise GeometryError("crop region has non-finite borders")

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    def intersects(self, image_width: int, image_height: int) -> bool:
        return self.left < image_width and self.right > 0 and self.top < image_height and self.bottom > 0

    def clamped(self, image_width: int, image_height: int) -> "CropRegion":
        """Intersection with the image rectangle."""
        if not self.intersects(image_width, image_height):
            raise GeometryError(f"crop {self!r} lies outside a {image_width}x{image_height} image")
        return CropRegion(
            max(self.left, 0.0),
            max(self.top, 0.0),
            min(self.right, float(image_width)),
            min(self.bottom, float(image_height)),
        )

    def pixel_slices(self) -> tuple[slice, slice]:
        """(row_slice, col_slice) of the integer pixel box."""
        return (
            slice(int(round(self.top)), int(round(self.bottom))),
            slice(int(round(self.left)), int(round(self.right))),
        )


class PathMask:
    """Binary occupancy grid, values in {0, 1}."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray) -> None:
        arr = np.asarray(data)
        if arr.ndim != 2:
            raise GeometryError(f"mask must be 2D, got shape {arr.shape}")
        self.data = (arr != 0).astype(np.uint8)

    @classmethod
    def empty(cls, width: int, height: int) -> "PathMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def count(self) -> int:
        return int(self.data.sum())

    def save_png(self, path) -> None:
        Image.fromarray(self.data * np.uint8(255), mode="L").save(path)

    @classmethod
    def load_png(cls, path) -> "PathMask":
        return cls(np.asarray(Image.open(path).convert("L")) >= 128)

    def __eq__(self, other) -> bool:
        return isinstance(other, PathMask) and np.array_equal(self.data, other.data)


def resample_at_rows(polyline: Polyline, rows) -> np.ndarray:
    """Linearly interpolated x value of the polyline at each requested y row.

    Rows outside the polyline's y span come back as NaN ("absent").
    """
    rows = np.asarray(rows, dtype=np.float64)
    # np.interp needs ascending sample positions; the polyline is stored
    # bottom-to-top, i.e. descending y.
    ys = polyline.ys[::-1]
    xs = polyline.xs[::-1]
    out = np.interp(rows, ys, xs)
    outside = (rows < ys[0]) | (rows > ys[-1])
    out = np.where(outside, np.nan, out)
    return out


def fill_polygon(vertices: np.ndarray, width: int, height: int) -> PathMask:
    """Even-odd scanline fill of a closed polygon over a width x height grid.

    A pixel is set iff its center lies inside the polygon; horizontal spans
    are half-open ([x_enter, x_exit)), as are the edge y-ranges, which keeps
    vertex-aligned scanlines counted exactly once.
    """
    verts = np.asarray(vertices, dtype=np.float64)
    mask = np.zeros((height, width), dtype=np.uint8)
    if verts.ndim != 2 or verts.shape[0] < 3:
        return PathMask(mask)
    x1 = verts[:, 0]
    y1 = verts[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)
    keep = y1 != y2
    x1, y1, x2, y2 = x1[keep], y1[keep], x2[keep], y2[keep]
    if x1.size == 0:
        return PathMask(mask)
    ylo = np.minimum(y1, y2)
    yhi = np.maximum(y1, y2)
    r0 = max(0, int(np.floor(ylo.min() - 0.5)))
    r1 = min(height - 1, int(np.ceil(yhi.max())))
    for r in range(r0, r1 + 1):
        yc = r + 0.5
        hit = (ylo <= yc) & (yc < yhi)
        if not hit.any():
            continue
        t = (yc - y1[hit]) / (y2[hit] - y1[hit])
        crossings = np.sort(x1[hit] + t * (x2[hit] - x1[hit]))
        for k in range(0, crossings.size - 1, 2):
            c0 = max(0, int(np.ceil(crossings[k] - 0.5)))
            c1 = min(width, int(np.ceil(crossings[k + 1] - 0.5)))
            if c1 > c0:
                mask[r, c0:c1] = 1
    return PathMask(mask)


def _rail_pair_polygon(left_points: np.ndarray, right_points: np.ndarray) -> np.ndarray:
    # Left boundary bottom-to-top, then right boundary top-to-bottom.
    return np.vstack([left_points, right_points[::-1]])


def rasterize_path(left_xs, right_xs, anchor_rows, valid_count: int, dims: tuple[int, int]) -> PathMask:
    """Filled area between two rail curves sampled at anchor rows.

    `left_xs`, `right_xs` and `anchor_rows` are ordered bottom-to-top; only
    the first `valid_count` anchors contribute.  Inverted pairs are swapped
    per row rather than rejected.  Fewer than 2 valid anchors gives an
    empty mask.
    """
    width, height = dims
    n = int(valid_count)
    if n < 2:
        return PathMask.empty(width, height)
    lx = np.asarray(left_xs, dtype=np.float64)[:n]
    rx = np.asarray(right_xs, dtype=np.float64)[:n]
    rows = np.asarray(anchor_rows, dtype=np.float64)[:n]
    if not (np.all(np.isfinite(lx)) and np.all(np.isfinite(rx)) and np.all(np.isfinite(rows))):
        raise GeometryError("non-finite anchor coordinates")
    lo = np.minimum(lx, rx)
    hi = np.maximum(lx, rx)
    poly = _rail_pair_polygon(np.column_stack([lo, rows]), np.column_stack([hi, rows]))
    return fill_polygon(poly, width, height)


def rasterize_rail_pair(left: Polyline, right: Polyline, dims: tuple[int, int]) -> PathMask:
    """Filled area between two rail polylines, using their raw points."""
    width, height = dims
    poly = _rail_pair_polygon(np.array(left.points), np.array(right.points))
    return fill_polygon(poly, width, height)


def iou(a: PathMask, b: PathMask) -> float:
    """Intersection over union of two masks; 1.0 when both are empty."""
    if a.data.shape != b.data.shape:
        raise GeometryError(f"mask dimensions differ: {a.data.shape} vs {b.data.shape}")
    inter = int(np.logical_and(a.data, b.data).sum())
    union = int(np.logical_or(a.data, b.data).sum())
    if union == 0:
        return 1.0
    return inter / union


def transform_path(points, crop: CropRegion, working_dims: tuple[int, int]) -> np.ndarray:
    """Map (N, 2) working-resolution points into original-image coordinates.

    The crop was resized to `working_dims`; this applies the inverse
    scale-and-translate.
    """
    work_w, work_h = working_dims
    if work_w <= 0 or work_h <= 0 or crop.width <= 0 or crop.height <= 0:
        raise GeometryError("zero-area crop or working region")
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty_like(pts)
    out[..., 0] = crop.left + pts[..., 0] * (crop.width / work_w)
    out[..., 1] = crop.top + pts[..., 1] * (crop.height / work_h)
    return out


def transform_path_inverse(points, crop: CropRegion, working_dims: tuple[int, int]) -> np.ndarray:
    """Map (N, 2) original-image points into working-resolution coordinates."""
    work_w, work_h = working_dims
    if work_w <= 0 or work_h <= 0 or crop.width <= 0 or crop.height <= 0:
        raise GeometryError("zero-area crop or working region")
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty_like(pts)
    out[..., 0] = (pts[..., 0] - crop.left) * (work_w / crop.width)
    out[..., 1] = (pts[..., 1] - crop.top) * (work_h / crop.height)
    return out


def anchor_row_positions(anchor_count: int, frame_height: float) -> np.ndarray:
    """Pixel y of each anchor row, bottom-to-top.

    Anchor i (1-based) sits at normalized height i/H above the frame
    bottom, so anchor H lies on the top edge.
    """
    i = np.arange(1, anchor_count + 1, dtype=np.float64)
    return frame_height * (1.0 - i / anchor_count)
