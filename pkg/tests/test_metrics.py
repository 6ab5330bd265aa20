"""Distance oracles, AP golden values, OLUS table identity, evaluation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapkit.metrics import (MetricReport, ScenePrediction, chamfer_distance,
                            det_score, det_t_score, evaluate,
                            frechet_distance, olus, project_topology,
                            top_score)


def recursive_frechet(a, b):
    """Exponential coupling-definition oracle (<= 8 points)."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def c(i, j):
        d = float(np.sqrt(((a[i] - b[j]) ** 2).sum()))
        if i == 0 and j == 0:
            return d
        if i == 0:
            return max(c(0, j - 1), d)
        if j == 0:
            return max(c(i - 1, 0), d)
        return max(min(c(i - 1, j), c(i - 1, j - 1), c(i, j - 1)), d)

    return c(len(a) - 1, len(b) - 1)


class TestFrechet:
    def test_identical(self):
        a = np.array([[0.0, 0], [1, 1], [2, 0]])
        assert frechet_distance(a, a) == 0.0

    def test_parallel_offset(self):
        a = np.column_stack([np.arange(5.0), np.zeros(5)])
        b = a + [0.0, 2.5]
        assert frechet_distance(a, b) == pytest.approx(2.5)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2 ** 31 - 1))
    def test_matches_recursive_oracle(self, n, m, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-10, 10, size=(n, 2))
        b = rng.uniform(-10, 10, size=(m, 2))
        assert frechet_distance(a, b) == recursive_frechet(a, b)


class TestChamfer:
    def test_identical(self):
        a = np.array([[0.0, 0], [3, 4]])
        assert chamfer_distance(a, a) == 0.0

    def test_singletons(self):
        assert chamfer_distance(np.array([[0.0, 0]]),
                                np.array([[3.0, 4]])) == pytest.approx(5.0)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(size=(7, 2))
        b = rng.uniform(size=(5, 2))
        fa = np.mean([min(np.linalg.norm(p - q) for q in b) for p in a])
        fb = np.mean([min(np.linalg.norm(q - p) for p in a) for q in b])
        assert chamfer_distance(a, b) == pytest.approx((fa + fb) / 2)


def euclid(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


class TestDetScore:
    def test_perfect(self):
        gts = [(np.array([float(i), 0.0]), 0) for i in range(4)]
        preds = [(g, c, 1.0) for g, c in gts]
        assert det_score(preds, gts, euclid, [1.0, 2.0]) == 1.0

    def test_no_predictions(self):
        gts = [(np.array([0.0, 0.0]), 0)]
        assert det_score([], gts, euclid, [1.0]) == 0.0

    def test_hand_worked_golden(self):
        """3 preds / 2 gts, one false positive ranked second: AP = 5/6."""
        gts = [(np.array([0.0, 0.0]), 0), (np.array([10.0, 0.0]), 0)]
        preds = [(np.array([0.0, 0.0]), 0, 0.9),
                 (np.array([50.0, 0.0]), 0, 0.8),
                 (np.array([10.0, 0.0]), 0, 0.7)]
        assert det_score(preds, gts, euclid, [1.0]) == pytest.approx(5 / 6)

    def test_non_increasing_when_threshold_shrinks(self):
        rng = np.random.default_rng(1)
        gts = [(rng.uniform(0, 10, 2), 0) for _ in range(5)]
        preds = [(g + rng.normal(0, 1.0, 2), c, float(rng.random()))
                 for g, c in gts]
        wide = det_score(preds, gts, euclid, [3.0])
        narrow = det_score(preds, gts, euclid, [0.5])
        assert narrow <= wide + 1e-12

    def test_score_scale_invariance(self):
        rng = np.random.default_rng(2)
        gts = [(rng.uniform(0, 10, 2), 0) for _ in range(4)]
        preds = [(g + rng.normal(0, 0.5, 2), c, float(rng.uniform(0.1, 0.9)))
                 for g, c in gts]
        a = det_score(preds, gts, euclid, [1.0])
        scaled = [(g, c, s * 0.37) for g, c, s in preds]
        assert det_score(scaled, gts, euclid, [1.0]) == pytest.approx(a)

    def test_class_aware(self):
        gts = [(np.array([0.0, 0.0]), 0), (np.array([0.0, 0.0]), 1)]
        preds = [(np.array([0.0, 0.0]), 0, 1.0)]  # only class 0 predicted
        assert det_score(preds, gts, euclid, [1.0]) == pytest.approx(0.5)

    def test_rejects_bad_thresholds(self):
        with pytest.raises(ValueError):
            det_score([], [(np.zeros(2), 0)], euclid, [2.0, 1.0])


class TestDetT:
    def test_perfect_boxes(self):
        gts = [((0.0, 0.0, 10.0, 10.0), 3), ((20.0, 0.0, 30.0, 10.0), 5)]
        preds = [(b, c, 1.0) for b, c in gts]
        assert det_t_score(preds, gts) == 1.0

    def test_disjoint_boxes(self):
        gts = [((0.0, 0.0, 10.0, 10.0), 0)]
        preds = [((500.0, 500.0, 510.0, 510.0), 0, 1.0)]
        assert det_t_score(preds, gts) == 0.0

    def test_iou_below_threshold_no_match(self):
        gts = [((0.0, 0.0, 2.0, 2.0), 0)]
        preds = [((1.0, 1.0, 3.0, 3.0), 0, 1.0)]  # IoU 1/7 < 0.5
        assert det_t_score(preds, gts, 0.5) == 0.0


class TestTopScore:
    def test_perfect(self):
        edges = [(1.0, True), (0.0, False), (0.0, False)]
        assert top_score(edges, 0) == 1.0

    def test_empty_matching_nonempty_gt(self):
        assert top_score([], 3) == 0.0

    def test_no_gt_edges(self):
        assert top_score([(0.1, False), (0.2, False)], 0) == 0.0

    def test_hand_worked_golden(self):
        """One wrong edge outranks the single true edge: AP = 1/2."""
        edges = [(0.95, False), (0.9, True), (0.1, False)]
        assert top_score(edges, 0) == pytest.approx(0.5)

    def test_unrecoverable_caps_ap(self):
        edges = [(0.9, True)]
        assert top_score(edges, 1) == pytest.approx(0.5)

    def test_projection(self):
        gt = np.array([[0, 1], [0, 0]], dtype=bool)
        pred = np.array([[0.0, 0.8, 0.1],
                         [0.2, 0.0, 0.3],
                         [0.4, 0.5, 0.0]])
        edges, unrec = project_topology(pred, gt, {0: 0, 1: 1})
        assert unrec == 0
        labels = {(p, l) for p, l in edges}
        assert (0.8, True) in labels
        assert len(edges) == 6  # off-diagonal pairs of a 3x3

    def test_projection_unmatched_gt_edge(self):
        gt = np.array([[0, 1], [0, 0]], dtype=bool)
        pred = np.zeros((1, 1))
        edges, unrec = project_topology(pred, gt, {0: 0})
        assert unrec == 1


OLUS_TABLE_ROWS = [
    # (det_l, det_a, det_t, top_ll, top_lt, printed_olus)
    (0.39, 0.38, 0.49, 0.38, 0.32, 0.49),
    (0.38, 0.36, 0.48, 0.37, 0.30, 0.47),
    (0.39, 0.38, 0.49, 0.38, 0.32, 0.4913),
    (0.41, 0.40, 0.50, 0.39, 0.32, 0.5008),
    (0.40, 0.39, 0.51, 0.39, 0.32, 0.5001),
    (0.29, 0.20, 0.36, 0.26, 0.21, 0.36),
    (0.35, 0.24, 0.40, 0.29, 0.21, 0.40),
    (0.38, 0.25, 0.49, 0.32, 0.30, 0.45),
    (0.40, 0.26, 0.50, 0.34, 0.29, 0.46),
    (0.42, 0.34, 0.50, 0.38, 0.30, 0.48),
    (0.43, 0.37, 0.51, 0.41, 0.31, 0.50),
    (0.44, 0.38, 0.50, 0.40, 0.31, 0.50),
    (0.44, 0.38, 0.50, 0.40, 0.31, 0.50),
    (0.44, 0.38, 0.73, 0.40, 0.46, 0.57),
    (0.44, 0.38, 0.73, 0.40, 0.52, 0.58),
    (0.44, 0.42, 0.73, 0.40, 0.52, 0.59),
    (0.39, 0.40, 0.80, 0.38, 0.48, 0.58),
]


class TestOlus:
    @pytest.mark.parametrize("row", OLUS_TABLE_ROWS)
    def test_reproduces_published_aggregation(self, row):
        *subs, printed = row
        assert olus(*subs) == pytest.approx(printed, abs=0.01)

    def test_all_ones(self):
        assert olus(1, 1, 1, 1, 1) == 1.0

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            olus(1.2, 0, 0, 0, 0)

    @settings(max_examples=40, deadline=None)
    @given(*[st.floats(0, 1) for _ in range(5)])
    def test_formula(self, a, b, c, d, e):
        assert olus(a, b, c, d, e) == pytest.approx(
            (a + b + c + np.sqrt(d) + np.sqrt(e)) / 5)


def gt_as_prediction(scene) -> ScenePrediction:
    """Oracle mode: replay the ground truth as a perfect prediction."""
    return ScenePrediction(
        lane_centerlines=[ls.centerline.points for ls in scene.lane_segments],
        lane_classes=[ls.class_id for ls in scene.lane_segments],
        lane_scores=[1.0] * len(scene.lane_segments),
        area_rings=[a.boundary for a in scene.areas],
        area_classes=[a.class_id for a in scene.areas],
        area_scores=[1.0] * len(scene.areas),
        traffic_boxes=[te.bbox for te in scene.traffic_elements],
        traffic_classes=[te.class_id for te in scene.traffic_elements],
        traffic_scores=[1.0] * len(scene.traffic_elements),
        adj_ll=scene.adj_ll.astype(float),
        adj_lt=scene.adj_lt.astype(float),
    )


class TestEvaluate:
    def make_corpus(self, n=10):
        from mapkit.scenegen import GenConfig, generate_scene
        return [generate_scene(s, GenConfig(lanes_min=3, lanes_max=6))
                for s in range(n)]

    def test_ground_truth_scores_one(self):
        scenes = self.make_corpus(10)
        preds = [gt_as_prediction(s) for s in scenes]
        r = evaluate(scenes, preds)
        assert r.det_l == 1.0
        assert r.det_a == 1.0
        assert r.det_t == 1.0
        assert r.top_ll == 1.0
        assert r.top_lt == 1.0
        assert r.olus == 1.0

    def test_empty_predictions_zero_det(self):
        scenes = self.make_corpus(4)
        empty = ScenePrediction([], [], [], [], [], [], [], [], [],
                                np.zeros((0, 0)), np.zeros((0, 0)))
        r = evaluate(scenes, [empty] * 4)
        assert r.det_l == 0.0
        assert r.det_a == 0.0
        assert r.det_t == 0.0

    def test_olus_consistency(self):
        scenes = self.make_corpus(6)
        preds = [gt_as_prediction(s) for s in scenes]
        r = evaluate(scenes, preds)
        assert r.olus == pytest.approx(
            olus(r.det_l, r.det_a, r.det_t, r.top_ll, r.top_lt), abs=1e-12)

    def test_misalignment_rejected(self):
        scenes = self.make_corpus(2)
        with pytest.raises(ValueError):
            evaluate(scenes, [])

    def test_csv_row_format(self):
        r = MetricReport(0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
        assert r.csv_row() == "0.1000,0.2000,0.3000,0.4000,0.5000,0.6000"
