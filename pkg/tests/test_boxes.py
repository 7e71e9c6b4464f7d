import numpy as np
import pytest

from reldet.boxes import ActorBox, filter_boxes, iou, roi_align
from reldet.errors import ValidationError
from reldet.gradcheck import check_gradients
from reldet.reference import bilinear_roi

RNG = np.random.default_rng(13)


class TestActorBox:
    def test_validation(self):
        with pytest.raises(ValidationError):
            ActorBox(0.5, 0.0, 0.4, 1.0)  # x2 < x1
        with pytest.raises(ValidationError):
            ActorBox(0.0, 0.0, 1.2, 1.0)
        with pytest.raises(ValidationError):
            ActorBox(0.0, 0.0, 1.0, 1.0, score=1.5)

    def test_zero_width_allowed_by_type(self):
        ActorBox(0.5, 0.5, 0.5, 0.5)  # degenerate but valid as a box


class TestIoU:
    def test_identical(self):
        b = ActorBox(0.1, 0.2, 0.6, 0.9)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(ActorBox(0, 0, 0.2, 0.2), ActorBox(0.5, 0.5, 0.9, 0.9)) == 0.0

    def test_hand_geometry_one_seventh(self):
        a = ActorBox(0.0, 0.0, 0.2, 0.2)
        b = ActorBox(0.1, 0.1, 0.3, 0.3)
        # intersection 0.01, union 0.07
        assert abs(iou(a, b) - 1.0 / 7.0) < 1e-9

    def test_symmetry(self):
        a = ActorBox(0.0, 0.0, 0.5, 0.4)
        b = ActorBox(0.2, 0.1, 0.9, 0.8)
        assert iou(a, b) == iou(b, a)


class TestFilterBoxes:
    def _gt(self):
        labels = np.array([1.0, 0.0, 1.0, 0.0], dtype=np.float32)
        return [(ActorBox(0.2, 0.2, 0.5, 0.5), labels)]

    def test_train_keeps_matching_proposal_with_inherited_labels(self):
        gt = self._gt()
        # IoU just above 0.75: shift one edge slightly
        prop = ActorBox(0.21, 0.2, 0.51, 0.5, score=0.3)
        assert iou(prop, gt[0][0]) > 0.75
        kept = filter_boxes([prop], gt, mode="train")
        assert len(kept) == 2
        assert kept[1][0] == prop
        assert np.array_equal(kept[1][1], gt[0][1])

    def test_train_drops_low_iou_proposal(self):
        gt = self._gt()
        prop = ActorBox(0.4, 0.4, 0.7, 0.7, score=0.99)
        assert iou(prop, gt[0][0]) < 0.75
        kept = filter_boxes([prop], gt, mode="train")
        assert len(kept) == 1

    def test_train_no_proposals_keeps_gt(self):
        kept = filter_boxes([], self._gt(), mode="train")
        assert len(kept) == 1

    def test_train_always_retains_every_gt(self):
        gts = [(ActorBox(0.1 * i, 0.1, 0.1 * i + 0.08, 0.2), np.zeros(4, np.float32))
               for i in range(5)]
        kept = filter_boxes([ActorBox(0.5, 0.5, 0.9, 0.9, 0.99)], gts, mode="train")
        assert [b for b, _ in kept[:5]] == [b for b, _ in gts]

    def test_infer_strict_score_threshold(self):
        props = [ActorBox(0, 0, 0.5, 0.5, score=0.85),
                 ActorBox(0, 0, 0.5, 0.5, score=0.8500001),
                 ActorBox(0, 0, 0.5, 0.5, score=0.2)]
        kept = filter_boxes(props, [], mode="infer")
        assert len(kept) == 1
        assert kept[0][0].score == pytest.approx(0.8500001)

    def test_bad_mode(self):
        with pytest.raises(ValidationError):
            filter_boxes([], [], mode="test")


class TestRoiAlign:
    def test_constant_map(self):
        fmap = np.full((3, 12, 10), 2.5, dtype=np.float32)
        out = roi_align(fmap, ActorBox(0.1, 0.2, 0.8, 0.9)).data
        assert out.shape == (3, 7, 7)
        assert np.allclose(out, 2.5, atol=1e-6)

    def test_linear_ramp_exact_at_cell_centers(self):
        # bilinear sampling is exact on a linear ramp; on an interior box the
        # averaged samples equal the ramp at each output cell center
        h = w = 16
        ramp = np.tile(np.arange(w, dtype=np.float64), (h, 1))[None]  # f(x,y)=x (pixels)
        box = ActorBox(0.25, 0.25, 0.75, 0.75)
        out = roi_align(ramp, box).data[0]
        x_lo, x_hi = box.x1 * w - 0.5, box.x2 * w - 0.5
        bw = (x_hi - x_lo) / 7
        centers = x_lo + (np.arange(7) + 0.5) * bw
        assert np.abs(out - centers[None, :]).max() < 1e-5

    def test_full_image_box_on_7x7_near_identity(self):
        # the quarter-offset samples form a 0.75/0.125/0.125 smoothing kernel
        # per axis, which is exact on linear maps: interior cells reproduce
        # the map, edge cells deviate only through sample clamping
        ramp = (np.arange(7, dtype=np.float64)[None, :, None]
                + 0.5 * np.arange(7, dtype=np.float64)[None, None, :])
        out = roi_align(ramp, ActorBox(0, 0, 1, 1)).data
        assert np.abs(out[:, 1:-1, 1:-1] - ramp[:, 1:-1, 1:-1]).max() < 1e-10
        assert np.abs(out - ramp).max() < 0.5
        # and on arbitrary maps it equals the direct bilinear oracle exactly
        fmap = RNG.normal(size=(2, 7, 7)).astype(np.float64)
        fast = roi_align(fmap, ActorBox(0, 0, 1, 1)).data
        assert np.abs(fast - bilinear_roi(fmap, ActorBox(0, 0, 1, 1))).max() < 1e-10

    def test_matches_pointwise_bilinear_oracle(self):
        fmap = RNG.normal(size=(3, 14, 11)).astype(np.float64)
        for box in (ActorBox(0.05, 0.1, 0.6, 0.7),
                    ActorBox(0.0, 0.0, 1.0, 1.0),
                    ActorBox(0.4, 0.45, 0.52, 0.58)):
            fast = roi_align(fmap, box).data
            slow = bilinear_roi(fmap, box)
            assert np.abs(fast - slow).max() < 1e-10

    def test_degenerate_box_rejected(self):
        fmap = np.ones((1, 8, 8), np.float32)
        with pytest.raises(ValidationError, match="degenerate"):
            roi_align(fmap, ActorBox(0.5, 0.2, 0.5, 0.8))

    def test_gradient_through_sampling(self):
        box = ActorBox(0.2, 0.1, 0.9, 0.8)
        err = check_gradients(
            lambda f: (roi_align(f, box) ** 2).sum(),
            [RNG.normal(size=(2, 9, 9))],
        )
        assert err < 1e-4
