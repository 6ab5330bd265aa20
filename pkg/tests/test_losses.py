"""Matching and loss terms: brute-force oracles, analytic spot values,
gradient checks."""

from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapkit.losses import (Assignment, CostWeights, align_ring, bbox_iou,
                           bce_with_logits, focal_loss, hungarian,
                           match_boxes_to_gt, match_cost_geometry, p2p_iou_np,
                           p2p_iou_loss_t, p2p_iou_t, topology_loss)
from mapkit.nn import Tensor, backward, grad_check, tsum


def brute_force_min_cost(cost: np.ndarray) -> float:
    n, m = cost.shape
    if n <= m:
        return min(sum(cost[i, p[i]] for i in range(n))
                   for p in permutations(range(m), n))
    return min(sum(cost[p[j], j] for j in range(m))
               for p in permutations(range(n), m))


class TestHungarian:
    def test_identity_favoring(self):
        cost = np.ones((3, 3)) - np.eye(3)
        a = hungarian(cost)
        assert a.pairs == ((0, 0), (1, 1), (2, 2))
        assert a.total_cost == 0.0

    def test_one_by_one(self):
        a = hungarian(np.array([[2.5]]))
        assert a.pairs == ((0, 0),)
        assert a.total_cost == 2.5

    def test_empty(self):
        assert hungarian(np.zeros((0, 3))).pairs == ()

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            hungarian(np.array([[np.inf]]))

    def test_lexicographic_ties(self):
        # every assignment costs 0: the smallest pair list wins
        assert hungarian(np.zeros((2, 3))).pairs == ((0, 0), (1, 1))
        assert hungarian(np.zeros((3, 2))).pairs == ((0, 0), (1, 1))

    def test_rectangular_pair_count(self):
        rng = np.random.default_rng(0)
        for n, m in [(2, 5), (5, 2), (4, 4)]:
            a = hungarian(rng.uniform(size=(n, m)))
            assert len(a.pairs) == min(n, m)
            assert len({i for i, _ in a.pairs}) == len(a.pairs)
            assert len({j for _, j in a.pairs}) == len(a.pairs)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
    def test_matches_brute_force(self, n, m, seed):
        cost = np.random.default_rng(seed).uniform(-5, 5, size=(n, m))
        a = hungarian(cost)
        assert a.total_cost == pytest.approx(brute_force_min_cost(cost),
                                             abs=1e-9)
        assert a.total_cost == pytest.approx(
            sum(cost[i, j] for i, j in a.pairs), abs=1e-12)


class TestP2PIoU:
    def test_identical_chains(self):
        a = np.array([[0.0, 0], [1, 0], [2, 0]])
        assert p2p_iou_np(a, a) == 1.0

    def test_beyond_2w_is_zero(self):
        a = np.zeros((4, 2))
        b = a + [5.0, 0.0]  # d = 5 >= 2w = 2
        assert p2p_iou_np(a, b, w=1.0) == 0.0

    def test_spot_value_third(self):
        a = np.zeros((1, 2))
        b = np.array([[1.0, 0.0]])  # d = w
        assert p2p_iou_np(a, b, w=1.0) == pytest.approx(1 / 3)

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = rng.uniform(-5, 5, size=(6, 2))
            b = rng.uniform(-5, 5, size=(6, 2))
            v = p2p_iou_np(a, b)
            assert 0.0 <= v <= 1.0
            assert v == pytest.approx(p2p_iou_np(b, a), abs=1e-15)

    def test_non_increasing_under_separation(self):
        a = np.zeros((5, 2))
        vals = [p2p_iou_np(a, a + [d, 0.0]) for d in np.linspace(0, 3, 20)]
        assert all(x >= y - 1e-12 for x, y in zip(vals[:-1], vals[1:]))

    def test_mismatched_counts_rejected(self):
        with pytest.raises(ValueError):
            p2p_iou_np(np.zeros((3, 2)), np.zeros((4, 2)))

    def test_loss_endpoints(self):
        a = np.array([[0.0, 0], [1, 0]])
        assert 1.0 - p2p_iou_np(a, a) == 0.0
        far = a + [100.0, 0]
        assert 1.0 - p2p_iou_np(a, far) == 1.0

    def test_tensor_matches_numpy(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(-2, 2, size=(5, 2))
        b = rng.uniform(-2, 2, size=(5, 2))
        assert p2p_iou_t(Tensor(a), b).item() == pytest.approx(
            p2p_iou_np(a, b), abs=1e-5)

    def test_loss_gradcheck_away_from_clamp(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.uniform(-0.5, 0.5, size=(4, 2)), requires_grad=True)
        b = a.data + rng.uniform(0.2, 0.8, size=(4, 2))  # 0 < d < 2w
        f = lambda: p2p_iou_loss_t(a, b)
        assert grad_check(f, [a], rng=rng) < 1e-4


class TestMatchCost:
    def test_perfect_prediction_zero(self):
        gt = np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]])
        probs = np.array([1.0, 0.0, 0.0])
        c = match_cost_geometry(gt, probs, gt, 0, CostWeights(), closed=True)
        assert c == pytest.approx(0.0, abs=1e-12)

    def test_monotone_in_translation(self):
        gt = np.array([[0.0, 0], [2, 0], [2, 2], [0, 2]])
        probs = np.array([0.7, 0.2, 0.1])
        costs = [match_cost_geometry(gt + [d, 0.0], probs, gt, 0,
                                     CostWeights(), closed=True)
                 for d in np.linspace(0, 5, 15)]
        assert all(b >= a - 1e-9 for a, b in zip(costs[:-1], costs[1:]))

    def test_cyclic_rotation_invariance(self):
        rng = np.random.default_rng(4)
        theta = np.linspace(0, 2 * np.pi, 8, endpoint=False)
        ring = np.column_stack([np.cos(theta), np.sin(theta)])
        pred = ring + rng.normal(0, 0.05, size=ring.shape)
        probs = np.array([0.8, 0.1, 0.1])
        base = match_cost_geometry(pred, probs, ring, 0, CostWeights(),
                                   closed=True)
        for r in range(1, 8):
            rolled = np.roll(ring, r, axis=0)
            assert match_cost_geometry(pred, probs, rolled, 0, CostWeights(),
                                       closed=True) == pytest.approx(base)

    def test_align_ring_recovers_rotation(self):
        theta = np.linspace(0, 2 * np.pi, 6, endpoint=False)
        ring = np.column_stack([np.cos(theta), np.sin(theta)])
        np.testing.assert_allclose(align_ring(ring, np.roll(ring, 3, axis=0)),
                                   ring, atol=1e-12)


class TestFocal:
    def test_confident_correct_is_zero(self):
        logits = Tensor(np.array([[20.0, -20.0, -20.0]]))
        assert focal_loss(logits, [0]).item() < 1e-6

    def test_gamma_zero_alpha_one_is_cross_entropy(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(6, 4))
        targets = rng.integers(0, 4, size=6)
        got = focal_loss(Tensor(logits), targets, alpha=1.0, gamma=0.0).item()
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        p = e / e.sum(axis=-1, keepdims=True)
        want = -np.log(p[np.arange(6), targets]).mean()
        assert got == pytest.approx(want, abs=1e-9)

    def test_matches_independent_focal_formula(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(size=(5, 3)) * 2
        targets = rng.integers(0, 3, size=5)
        got = focal_loss(Tensor(logits), targets).item()
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        p = e / e.sum(axis=-1, keepdims=True)
        pt = p[np.arange(5), targets]
        want = (-0.25 * (1 - pt) ** 2 * np.log(pt)).mean()
        assert got == pytest.approx(want, abs=1e-9)

    def test_gradcheck(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        targets = rng.integers(0, 3, size=4)
        f = lambda: focal_loss(x, targets)
        assert grad_check(f, [x], rng=rng) < 1e-4


class TestTopologyLoss:
    def test_perfect_logits_near_zero(self):
        gt = np.array([[0, 1], [0, 0]], dtype=bool)
        logits = np.where(gt, 20.0, -20.0)
        loss = topology_loss(Tensor(logits), gt, {0: 0, 1: 1})
        assert loss.item() < 1e-6

    def test_empty_assignment_all_negative(self):
        gt = np.ones((2, 2), dtype=bool) ^ np.eye(2, dtype=bool)
        logits = Tensor(np.full((3, 3), -20.0))
        assert topology_loss(logits, gt, {}).item() < 1e-6

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        gt = rng.random((3, 3)) > 0.5
        np.fill_diagonal(gt, False)
        logits = rng.normal(size=(4, 4))
        assign = {0: 1, 2: 0, 3: 2}
        base = topology_loss(Tensor(logits), gt, assign).item()
        perm = np.array([2, 0, 3, 1])
        logits_p = logits[np.ix_(perm, perm)]
        assign_p = {int(np.where(perm == i)[0][0]): g
                    for i, g in assign.items()}
        got = topology_loss(Tensor(logits_p), gt, assign_p).item()
        assert got == pytest.approx(base, abs=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(9)
        gt = rng.random((2, 2)) > 0.5
        np.fill_diagonal(gt, False)
        x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        f = lambda: topology_loss(x, gt, {0: 0, 1: 1})
        assert grad_check(f, [x], rng=rng) < 1e-4


class TestBoxMatching:
    def test_bbox_iou_value(self):
        assert bbox_iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)

    def test_disjoint(self):
        assert bbox_iou((0, 0, 1, 1), (5, 5, 6, 6)) == 0.0

    def test_threshold_filters(self):
        from mapkit.scene import TrafficElement
        p = TrafficElement((0.0, 0.0, 2.0, 2.0), 0)
        g = TrafficElement((1.0, 1.0, 3.0, 3.0), 0)  # IoU 1/7 < 0.5
        assert match_boxes_to_gt((p,), (g,)) == {}
        g2 = TrafficElement((0.0, 0.0, 2.0, 2.1), 0)
        assert match_boxes_to_gt((p,), (g2,)) == {0: 0}


class TestBCE:
    def test_masked_mean(self):
        logits = Tensor(np.array([[0.0, 100.0], [0.0, 0.0]]))
        target = np.zeros((2, 2))
        mask = np.array([[1.0, 0.0], [1.0, 1.0]])
        got = bce_with_logits(logits, target, mask).item()
        assert got == pytest.approx(np.log(2.0), abs=1e-9)

    def test_gradcheck(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        t = (rng.random((3, 3)) > 0.5).astype(float)
        f = lambda: bce_with_logits(x, t)
        assert grad_check(f, [x], rng=rng) < 1e-4


class TestCostWeights:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            CostWeights(cls=-1.0)

    def test_rejects_all_zero(self):
        with pytest.raises(ValueError):
            CostWeights(cls=0, pt=0, iou=0, topo=0, aux=0)
