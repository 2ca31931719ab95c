import numpy as np
import pytest

from dloasm.errors import (DegenerateInput, NoDepthData, NoTopLayer,
                           ShapeError)
from dloasm.grid import GridImage, iou
from dloasm.segmentation import (Mask, MaskSet, SegParams, extract_top_layer,
                                 largest_component, mask_to_raw_shape,
                                 postprocess_masks, sample_prompts,
                                 select_target, skeletonize)

PITCH = 0.002
SIZE = 128


def grid(values, origin=(0.0, 0.0, 0.8)):
    return GridImage(np.asarray(values, dtype=float), PITCH,
                     np.asarray(origin, dtype=float))


def mask_from_flat(indices, size=SIZE):
    """Binary mask over a size x size grid from flattened pixel indices."""
    flat = np.zeros(size * size)
    flat[list(indices)] = 1.0
    return grid(flat.reshape(size, size))


class TestTopLayer:
    def test_selects_shallow_component(self):
        depth = np.zeros((64, 64))
        depth[5:15, 5:60] = 0.60      # shallow slab, 550 px
        depth[40:50, 5:60] = 0.70     # deeper slab
        p = SegParams(a_threshold=400, step_s=0.005)
        top, d = extract_top_layer(grid(depth), p)
        assert d < 0.65
        assert top.binary()[10, 30]
        assert not top.binary()[45, 30]

    def test_scans_deeper_until_area_reached(self):
        depth = np.zeros((64, 64))
        depth[5:8, 5:15] = 0.60       # 30 px, below threshold
        depth[40:50, 5:60] = 0.70     # 550 px
        p = SegParams(a_threshold=400, step_s=0.005)
        top, d = extract_top_layer(grid(depth), p)
        assert d >= 0.70 - 1e-9
        assert top.binary()[45, 30]

    def test_no_valid_pixels(self):
        with pytest.raises(NoTopLayer):
            extract_top_layer(grid(np.zeros((8, 8))), SegParams())

    def test_area_never_reached(self):
        depth = np.zeros((64, 64))
        depth[5:8, 5:15] = 0.60
        with pytest.raises(NoTopLayer):
            extract_top_layer(grid(depth), SegParams(a_threshold=5000))

    def test_largest_component_fallback(self):
        depth = np.zeros((32, 32))
        depth[2:4, 2:20] = 0.6
        depth[20:21, 2:5] = 0.6
        out = largest_component(grid(depth))
        assert out.binary()[2, 10]
        assert not out.binary()[20, 3]


class TestSkeleton:
    def test_straight_band_single_path(self):
        mask = np.zeros((40, 100))
        mask[18:24, 10:90] = 1.0
        skel = skeletonize(grid(mask), prune_min=10)
        assert len(skel.paths) == 1
        path = skel.longest_path()
        assert len(path) > 60
        assert np.all(np.abs(path[:, 0] - 20.5) <= 2.5)

    def test_short_spurs_pruned(self):
        mask = np.zeros((60, 120))
        mask[28:33, 10:110] = 1.0   # long band
        mask[33:38, 60:63] = 1.0    # tiny bump creating a spur
        skel = skeletonize(grid(mask), prune_min=10)
        assert all(len(p) >= 10 for p in skel.paths)

    def test_empty_mask(self):
        skel = skeletonize(grid(np.zeros((10, 10))), prune_min=5)
        assert skel.paths == []
        assert len(skel.longest_path()) == 0

    def test_paths_are_8_connected_chains(self):
        mask = np.zeros((50, 50))
        for i in range(40):
            mask[5 + i // 2, 5 + i] = 1.0  # diagonal-ish band
        skel = skeletonize(grid(mask), prune_min=5)
        for path in skel.paths:
            steps = np.abs(np.diff(path, axis=0))
            assert steps.max() <= 1


class TestPrompts:
    def band_skeleton(self):
        mask = np.zeros((40, 120))
        mask[18:22, 10:110] = 1.0
        return skeletonize(grid(mask), prune_min=5)

    def test_exact_count(self):
        skel = self.band_skeleton()
        for n in (1, 5, 20):
            assert len(sample_prompts(skel, n)) == n

    def test_prompts_lie_on_skeleton(self):
        skel = self.band_skeleton()
        pixels = {tuple(px) for p in skel.paths for px in p}
        for prompt in sample_prompts(skel, 10):
            assert tuple(prompt) in pixels

    def test_allocation_proportional_to_length(self):
        mask = np.zeros((60, 120))
        mask[10:13, 5:105] = 1.0    # long band (~100 px)
        mask[40:43, 5:30] = 1.0     # short band (~25 px)
        skel = skeletonize(grid(mask), prune_min=5)
        prompts = sample_prompts(skel, 10)
        long_count = sum(1 for r, c in prompts if r < 20)
        assert long_count in (7, 8, 9)

    def test_empty_skeleton_raises(self):
        with pytest.raises(DegenerateInput):
            sample_prompts(skeletonize(grid(np.zeros((5, 5))), 5), 4)


class TestPostprocess:
    def test_three_mask_fixture(self):
        # A and B overlap with IoU exactly 0.2; C overlaps each with IoU 0.05.
        # With merge threshold 0.4 nothing merges; with discard threshold 0.1
        # the keep rule keeps A (highest confidence), drops B, keeps C.
        a = mask_from_flat(range(0, 315))
        b = mask_from_flat(range(210, 525))
        c = mask_from_flat(list(range(285, 315)) + list(range(525, 810)))
        assert np.isclose(iou(a, b), 0.2)
        assert np.isclose(iou(a, c), 0.05)
        assert np.isclose(iou(b, c), 0.05)
        raw = MaskSet([Mask(a, 0.9), Mask(b, 0.8), Mask(c, 0.7)])
        out = postprocess_masks(raw, SegParams(t_merge=0.4, t_discard=0.1))
        assert len(out) == 2
        assert np.array_equal(out[0].image.binary(), a.binary())
        assert out[0].confidence == 0.9
        assert np.array_equal(out[1].image.binary(), c.binary())
        assert out[1].confidence == 0.7

    def test_high_iou_pair_merges_with_max_confidence(self):
        a = mask_from_flat(range(0, 100))
        b = mask_from_flat(range(20, 120))   # IoU = 80/120 > 0.4
        raw = MaskSet([Mask(b, 0.6), Mask(a, 0.9)])
        out = postprocess_masks(raw, SegParams(t_merge=0.4, t_discard=0.1))
        assert len(out) == 1
        assert np.array_equal(out[0].image.binary(),
                              a.binary() | b.binary())
        assert out[0].confidence == 0.9

    def test_confidence_orders_survivors(self):
        a = mask_from_flat(range(0, 100))
        b = mask_from_flat(range(500, 600))
        raw = MaskSet([Mask(a, 0.3), Mask(b, 0.8)])
        out = postprocess_masks(raw, SegParams())
        assert out[0].confidence == 0.8

    def test_empty_set(self):
        assert len(postprocess_masks(MaskSet([]), SegParams())) == 0

    def keep_rule_holds(self, out, p):
        for i in range(len(out)):
            for j in range(i):
                assert iou(out[i].image, out[j].image) <= p.t_discard + 1e-12

    def test_keep_rule_and_idempotence_random(self, rng):
        p = SegParams(t_merge=0.4, t_discard=0.1)
        for _ in range(20):
            masks = []
            for _ in range(int(rng.integers(1, 15))):
                m = np.zeros(64 * 64)
                start = int(rng.integers(0, 3000))
                m[start:start + int(rng.integers(50, 800))] = 1.0
                masks.append(Mask(grid(m.reshape(64, 64)),
                                  float(rng.uniform(0.1, 1.0))))
            out = postprocess_masks(MaskSet(masks), p)
            self.keep_rule_holds(out, p)
            again = postprocess_masks(out, p)
            assert len(again) == len(out)
            for x, y in zip(out.masks, again.masks):
                assert np.array_equal(x.image.binary(), y.image.binary())
                assert x.confidence == y.confidence

    def test_mask_confidence_validation(self):
        with pytest.raises(DegenerateInput):
            Mask(mask_from_flat([0]), 1.5)

    def test_maskset_shape_validation(self):
        with pytest.raises(ShapeError):
            MaskSet([Mask(mask_from_flat([0], 16), 0.5),
                     Mask(mask_from_flat([0], 32), 0.5)])

    def test_params_validation(self):
        with pytest.raises(DegenerateInput):
            SegParams(t_merge=0.1, t_discard=0.4)


class TestBackProjection:
    def straight_tube(self, z_top=0.011, radius=0.0055):
        """Depth image of a synthetic tube along X at y = 0.05."""
        h, w = 50, 120
        depth = np.zeros((h, w))
        mask = np.zeros((h, w))
        camera = 0.8
        for r in range(h):
            y = (r + 0.5) * PITCH
            d = abs(y - 0.05)
            if d <= radius:
                crest = z_top - radius + np.sqrt(radius ** 2 - d ** 2)
                depth[r, 5:115] = camera - crest
                mask[r, 5:115] = 1.0
        return grid(depth), grid(mask)

    def test_points_on_centerline(self):
        depth, mask = self.straight_tube()
        shape = mask_to_raw_shape(mask, depth, prune_min=5, z_offset=-0.0055)
        pts = shape.points
        assert np.abs(pts[:, 1] - 0.05).max() < 0.0015
        assert np.abs(pts[:, 2] - 0.0055).max() < 0.0015

    def test_shape_mismatch(self):
        depth, mask = self.straight_tube()
        small = grid(np.zeros((4, 4)))
        with pytest.raises(ShapeError):
            mask_to_raw_shape(small, depth, 5)

    def test_no_depth_under_mask(self):
        depth = grid(np.zeros((50, 120)))
        _, mask = self.straight_tube()
        with pytest.raises(NoDepthData):
            mask_to_raw_shape(mask, depth, 5)

    def test_missing_depth_produces_gap(self):
        depth, mask = self.straight_tube()
        vals = depth.values.copy()
        vals[:, 50:70] = 0.0  # occluded stripe
        shape = mask_to_raw_shape(mask, grid(vals), prune_min=5,
                                  z_offset=-0.0055)
        xs = np.sort(shape.points[:, 0])
        assert np.max(np.diff(xs)) > 0.03  # the stripe leaves a spatial gap


class TestSelectTarget:
    def test_longest_skeleton_wins(self):
        long_mask = np.zeros((64, 64))
        long_mask[10:14, 2:62] = 1.0
        short_mask = np.zeros((64, 64))
        short_mask[40:44, 2:30] = 1.0
        ms = MaskSet([Mask(grid(short_mask), 0.9), Mask(grid(long_mask), 0.5)])
        idx, skel = select_target(ms, prune_min=5)
        assert idx == 1
        assert len(skel.longest_path()) > 40

    def test_all_empty_raises(self):
        from dloasm.errors import NoCandidate
        ms = MaskSet([Mask(grid(np.zeros((16, 16))), 0.5)])
        with pytest.raises(NoCandidate):
            select_target(ms, prune_min=5)
