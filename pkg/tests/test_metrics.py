import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdet.data import BoxAnnotation
from tdet.metrics import average_precision, evaluate, match_detections, report_csv_lines, report_table

from reference_impls import naive_average_precision, naive_greedy_match


def det_row(name, cls, score, box):
    return (name, cls, score, box[0], box[1], box[2], box[3])


class TestMatchDetections:
    def test_exact_hit_is_tp(self):
        flags = match_detections(
            [[0, 0, 10, 10]], [1], [[0, 0, 10, 10]], [1], iou_thresh=0.5
        )
        assert flags.tolist() == [True]

    def test_single_match_rule(self):
        flags = match_detections(
            [[0, 0, 10, 10], [1, 0, 11, 10]], [0, 0], [[0, 0, 10, 10]], [0], 0.5
        )
        assert flags.tolist() == [True, False]

    def test_class_must_match(self):
        flags = match_detections([[0, 0, 10, 10]], [1], [[0, 0, 10, 10]], [2], 0.5)
        assert flags.tolist() == [False]

    def test_iou_threshold_respected(self):
        flags = match_detections([[0, 0, 10, 10]], [0], [[6, 0, 16, 10]], [0], 0.5)
        assert flags.tolist() == [False]

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_matches_bruteforce_greedy(self, seed):
        rs = np.random.RandomState(seed)
        n_det, n_gt = rs.randint(1, 30), rs.randint(1, 10)

        def boxes(n):
            x1 = rs.uniform(0, 40, n)
            y1 = rs.uniform(0, 40, n)
            return np.stack([x1, y1, x1 + rs.uniform(2, 20, n), y1 + rs.uniform(2, 20, n)], 1)

        db = boxes(n_det)
        dc = rs.randint(0, 3, n_det)
        scores = np.sort(rs.uniform(0, 1, n_det))[::-1]
        gb = boxes(n_gt)
        gc = rs.randint(0, 3, n_gt)
        flags = match_detections(db, dc, gb, gc, 0.5)
        ref = naive_greedy_match(
            [(int(c), float(s), b.tolist()) for c, s, b in zip(dc, scores, db)],
            [(int(c), b.tolist()) for c, b in zip(gc, gb)],
            0.5,
        )
        assert flags.tolist() == ref


class TestAveragePrecision:
    def test_single_tp(self):
        assert average_precision([True], [0.9], 1) == 1.0

    def test_tp_then_fp_keeps_full_ap(self):
        assert average_precision([True, False], [0.9, 0.8], 1) == 1.0

    def test_fp_then_tp_halves(self):
        assert average_precision([False, True], [0.9, 0.8], 1) == pytest.approx(0.5, abs=1e-12)

    def test_no_detections_zero(self):
        assert average_precision([], [], 3) == 0.0

    def test_zero_gt_rejected(self):
        with pytest.raises(ValueError):
            average_precision([True], [0.5], 0)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_matches_bruteforce_pr_curve(self, seed):
        rs = np.random.RandomState(seed)
        n = rs.randint(1, 25)
        n_gt = rs.randint(1, 10)
        flags = rs.rand(n) < 0.4
        flags[: min(n, n_gt)] &= True
        if flags.sum() > n_gt:
            extra = np.flatnonzero(flags)[n_gt:]
            flags[extra] = False
        scores = np.sort(rs.uniform(0, 1, n))[::-1]
        got = average_precision(flags, scores, n_gt)
        ref = naive_average_precision(flags.tolist(), n_gt)
        assert got == pytest.approx(ref, abs=1e-9)

    def test_invariant_under_monotone_score_rescale(self):
        rs = np.random.RandomState(5)
        flags = rs.rand(15) < 0.5
        scores = np.sort(rs.uniform(0, 1, 15))[::-1]
        a = average_precision(flags, scores, 6)
        b = average_precision(flags, np.sqrt(scores), 6)  # same order
        assert a == b

    def test_trailing_low_score_fp_never_increases(self):
        rs = np.random.RandomState(6)
        flags = (rs.rand(10) < 0.5).tolist()
        scores = np.sort(rs.uniform(0.2, 1, 10))[::-1].tolist()
        base = average_precision(flags, scores, 4)
        worse = average_precision(flags + [False], scores + [0.01], 4)
        assert worse <= base + 1e-12


def toy_truth():
    return {
        "a.ppm": [BoxAnnotation(0, 0, 0, 10, 10), BoxAnnotation(1, 20, 20, 30, 30)],
        "b.ppm": [BoxAnnotation(2, 5, 5, 15, 15)],
    }


class TestEvaluate:
    def test_perfect_detector(self):
        dets = []
        for name, anns in toy_truth().items():
            for a in anns:
                dets.append(det_row(name, a.class_id, 1.0, (a.xmin, a.ymin, a.xmax, a.ymax)))
        rep = evaluate(dets, toy_truth())
        assert rep.map == 1.0
        assert rep.mar == 1.0
        assert rep.f1 == 1.0

    def test_empty_detections_zero(self):
        rep = evaluate([], toy_truth())
        assert rep.map == 0.0 and rep.mar == 0.0 and rep.f1 == 0.0

    def test_no_ground_truth_rejected(self):
        with pytest.raises(ValueError):
            evaluate([det_row("a.ppm", 0, 1.0, (0, 0, 5, 5))], {"a.ppm": []})

    def test_mixed_case_matches_hand_computation(self):
        # class 0: TP@0.9, FP@0.6 over 1 gt -> AP 1.0
        # class 1: FP@0.8, TP@0.7 over 1 gt -> AP 0.5
        # class 2: no detections over 1 gt -> AP 0.0
        truth = toy_truth()
        dets = [
            det_row("a.ppm", 0, 0.9, (0, 0, 10, 10)),
            det_row("a.ppm", 0, 0.6, (40, 40, 50, 50)),
            det_row("a.ppm", 1, 0.8, (40, 0, 50, 10)),
            det_row("a.ppm", 1, 0.7, (20, 20, 30, 30)),
        ]
        rep = evaluate(dets, truth, iou_thresh=0.5, score_thresh=0.5)
        assert rep.per_class[0].ap == pytest.approx(1.0)
        assert rep.per_class[1].ap == pytest.approx(0.5)
        assert rep.per_class[2].ap == 0.0
        assert rep.map == pytest.approx((1.0 + 0.5 + 0.0) / 3, abs=1e-9)
        # recall: class0 1/1, class1 1/1, class2 0 -> mAR 2/3
        assert rep.mar == pytest.approx(2.0 / 3.0, abs=1e-9)
        # F1 at score>=0.5: class0 P=1/2 R=1 -> 2/3; class1 P=1/2 R=1 -> 2/3; class2 0
        assert rep.f1 == pytest.approx((2 / 3 + 2 / 3 + 0) / 3, abs=1e-9)

    def test_duplicated_detections_do_not_raise_recall(self):
        truth = toy_truth()
        dets = [
            det_row("a.ppm", 0, 0.9, (0, 0, 10, 10)),
            det_row("a.ppm", 1, 0.8, (20, 20, 30, 30)),
            det_row("b.ppm", 2, 0.7, (5, 5, 15, 15)),
        ]
        rep1 = evaluate(dets, truth)
        rep2 = evaluate(dets + dets, truth)  # same boxes duplicated
        assert rep2.mar == rep1.mar

    def test_report_rendering(self):
        dets = [det_row("a.ppm", 0, 0.9, (0, 0, 10, 10))]
        rep = evaluate(dets, toy_truth())
        lines = report_csv_lines(rep, ["sq", "disk", "tri"])
        assert lines[0].startswith("class,")
        assert lines[-1].startswith("aggregate,")
        table = report_table(rep, ["sq", "disk", "tri"])
        assert "mAP/mAR/F1" in table

    def test_map_of_identical_aps_is_that_ap(self):
        truth = {"a.ppm": [BoxAnnotation(0, 0, 0, 10, 10), BoxAnnotation(1, 20, 20, 30, 30)]}
        dets = [
            det_row("a.ppm", 0, 0.9, (0, 0, 10, 10)),
            det_row("a.ppm", 1, 0.8, (20, 20, 30, 30)),
        ]
        rep = evaluate(dets, truth)
        assert rep.per_class[0].ap == rep.per_class[1].ap == rep.map == 1.0
