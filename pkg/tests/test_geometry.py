import numpy as np
import pytest

from railpath.geometry import (CropRegion, GeometryError, PathMask, Polyline,
                               anchor_row_positions, fill_polygon, iou, rasterize_path,
                               rasterize_rail_pair, resample_at_rows, transform_path,
                               transform_path_inverse)

from reference import boundary_band, polygon_mask_bruteforce


class TestPolyline:
    def test_sorted_bottom_to_top(self):
        p = Polyline([(0, 10), (5, 50), (2, 30)])
        assert list(p.ys) == [50, 30, 10]

    def test_duplicate_y_coalesced(self):
        p = Polyline([(0, 10), (4, 10), (5, 50)])
        assert len(p) == 2
        assert p.points[1].tolist() == [2.0, 10.0]

    def test_rejects_non_finite(self):
        with pytest.raises(GeometryError):
            Polyline([(0, 0), (np.nan, 10)])

    def test_rejects_degenerate(self):
        with pytest.raises(GeometryError):
            Polyline([(0, 10), (5, 10)])

    def test_rejects_single_point(self):
        with pytest.raises(GeometryError):
            Polyline([(0, 10)])


class TestResampleAtRows:
    def test_constant_x_line(self):
        p = Polyline([(5, 0), (5, 100)])
        assert resample_at_rows(p, [0, 50, 100]).tolist() == [5, 5, 5]

    def test_linear_midpoint(self):
        p = Polyline([(0, 0), (100, 100)])
        assert resample_at_rows(p, [50]).tolist() == [50]

    def test_outside_span_absent(self):
        p = Polyline([(0, 0), (10, 100)])
        assert np.isnan(resample_at_rows(p, [120])).all()

    def test_commutes_with_uniform_scaling(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            n = rng.integers(2, 8)
            ys = np.sort(rng.uniform(0, 100, n))
            while len(np.unique(ys)) < n:
                ys = np.sort(rng.uniform(0, 100, n))
            pts = np.column_stack([rng.uniform(-50, 50, n), ys])
            rows = rng.uniform(ys[0], ys[-1], 5)
            k = rng.uniform(0.1, 10)
            base = resample_at_rows(Polyline(pts), rows)
            scaled = resample_at_rows(Polyline(pts * k), rows * k)
            np.testing.assert_allclose(scaled, base * k, rtol=1e-9, atol=1e-9)


class TestRasterizePath:
    def test_constant_rails_give_rectangle(self):
        rows = np.array([9.0, 6.0, 3.0, 0.0])
        mask = rasterize_path([2, 2, 2, 2], [7, 7, 7, 7], rows, 4, (10, 10))
        expected = np.zeros((10, 10), dtype=np.uint8)
        expected[0:9, 2:7] = 1  # rows 0..8 have centers inside [0, 9)
        np.testing.assert_array_equal(mask.data, expected)

    def test_no_valid_anchors_empty(self):
        mask = rasterize_path([], [], [], 0, (10, 10))
        assert mask.count() == 0

    def test_one_anchor_empty(self):
        mask = rasterize_path([2], [7], [5], 1, (10, 10))
        assert mask.count() == 0

    def test_inverted_pair_swapped(self):
        rows = np.array([9.0, 0.0])
        a = rasterize_path([7, 7], [2, 2], rows, 2, (10, 10))
        b = rasterize_path([2, 2], [7, 7], rows, 2, (10, 10))
        assert a == b

    def test_trapezoid_matches_bruteforce_oracle(self):
        rows = np.array([120.0, 60.0, 10.0])
        left = np.array([10.0, 40.0, 55.0])
        right = np.array([110.0, 85.0, 70.0])
        mask = rasterize_path(left, right, rows, 3, (128, 128))
        poly = np.array([[10, 120], [40, 60], [55, 10], [70, 10], [85, 60], [110, 120]], float)
        oracle = polygon_mask_bruteforce(poly, 128, 128)
        band = boundary_band(poly, 128, 128)
        disagree = mask.data.astype(int) ^ oracle.astype(int)
        assert np.all(band[disagree == 1] == 1)

    def test_random_curves_match_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            n = int(rng.integers(3, 16))
            rows = np.sort(rng.uniform(0, 127, n))[::-1]
            mid = rng.uniform(30, 98, n)
            half = rng.uniform(2, 28, n)
            left, right = mid - half, mid + half
            mask = rasterize_path(left, right, rows, n, (128, 128))
            poly = np.vstack([np.column_stack([left, rows]),
                              np.column_stack([right, rows])[::-1]])
            oracle = polygon_mask_bruteforce(poly, 128, 128)
            band = boundary_band(poly, 128, 128)
            disagree = mask.data.astype(int) ^ oracle.astype(int)
            assert np.all(band[disagree == 1] == 1)


class TestIoU:
    def test_identical_nonempty(self):
        m = PathMask(np.ones((4, 4)))
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4)); a[0, 0] = 1
        b = np.zeros((4, 4)); b[3, 3] = 1
        assert iou(PathMask(a), PathMask(b)) == 0.0

    def test_shifted_block(self):
        a = np.zeros((20, 20)); a[0:10, 0:10] = 1
        b = np.zeros((20, 20)); b[5:15, 0:10] = 1
        assert iou(PathMask(a), PathMask(b)) == pytest.approx(50 / 150)

    def test_both_empty_is_one(self):
        assert iou(PathMask.empty(4, 4), PathMask.empty(4, 4)) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(GeometryError):
            iou(PathMask.empty(4, 4), PathMask.empty(5, 4))

    def test_symmetry_and_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = PathMask(rng.integers(0, 2, (16, 16)))
            b = PathMask(rng.integers(0, 2, (16, 16)))
            v = iou(a, b)
            assert v == iou(b, a)
            assert 0.0 <= v <= 1.0


class TestTransformPath:
    def test_identity_crop(self):
        crop = CropRegion(0, 0, 512, 512)
        pts = np.array([[256.0, 256.0], [10.0, 400.0]])
        np.testing.assert_allclose(transform_path(pts, crop, (512, 512)), pts)

    def test_hand_affine(self):
        crop = CropRegion(100, 100, 612, 612)
        out = transform_path(np.array([[256.0, 256.0]]), crop, (512, 512))
        np.testing.assert_allclose(out, [[356.0, 356.0]])

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            l, t = rng.uniform(0, 200, 2)
            crop = CropRegion(l, t, l + rng.uniform(10, 500), t + rng.uniform(10, 500))
            dims = (int(rng.integers(16, 1024)), int(rng.integers(16, 1024)))
            pts = rng.uniform(-100, 700, (12, 2))
            back = transform_path_inverse(transform_path(pts, crop, dims), crop, dims)
            np.testing.assert_allclose(back, pts, atol=1e-6)

    def test_zero_area_crop_rejected(self):
        with pytest.raises(GeometryError):
            CropRegion(10, 10, 10, 50)


class TestCropRegion:
    def test_clamped(self):
        c = CropRegion(-10, -5, 700, 400).clamped(640, 360)
        assert (c.left, c.top, c.right, c.bottom) == (0, 0, 640, 360)

    def test_outside_image_rejected(self):
        with pytest.raises(GeometryError):
            CropRegion(700, 0, 800, 100).clamped(640, 360)


class TestAnchorRows:
    def test_bottom_up_positions(self):
        rows = anchor_row_positions(4, 100.0)
        assert rows.tolist() == [75.0, 50.0, 25.0, 0.0]


class TestPathMaskPng:
    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        mask = PathMask(rng.integers(0, 2, (32, 48)))
        p = tmp_path / "mask.png"
        mask.save_png(p)
        assert PathMask.load_png(p) == mask


def test_rail_pair_rasterization_matches_oracle(scene):
    _, ann = scene
    dims = (ann.image_width, ann.image_height)
    mask = rasterize_rail_pair(ann.left_rail, ann.right_rail, dims)
    poly = np.vstack([ann.left_rail.points, ann.right_rail.points[::-1]])
    oracle = polygon_mask_bruteforce(poly, *dims)
    band = boundary_band(poly, *dims)
    disagree = mask.data.astype(int) ^ oracle.astype(int)
    assert np.all(band[disagree == 1] == 1)


def test_fill_polygon_degenerate_inputs():
    assert fill_polygon(np.zeros((0, 2)), 8, 8).count() == 0
    assert fill_polygon(np.array([[1.0, 1.0], [5.0, 5.0]]), 8, 8).count() == 0
