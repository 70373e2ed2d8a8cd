import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from densecap3d.assignment import (
    SetCriterion, SetLossWeights, TotalLossWeights, assign_captions, cost_components,
    hungarian, match_scene, pair_cost, sample_captions, set_loss, total_loss,
)
from densecap3d.geom3d import Box3D, giou3d
from densecap3d.scene import InstanceSet, PredictionSet
from densecap3d.scenesim import SceneSpec, gen_scene, perturbed_predictions

from oracles import brute_force_assignment


def onehot(k, n_slots):
    p = np.zeros(n_slots)
    p[k] = 1.0
    return p


def synthetic(seed, n_inst=(3, 6)):
    return gen_scene(SceneSpec(seed=seed, instance_count=n_inst, points_per_instance=8,
                               floor_points=8), 0)


class TestHungarian:
    def test_zero_diagonal(self):
        cost = np.ones((3, 3)) * 5 - np.eye(3) * 5
        a = hungarian(cost)
        assert a.pairs == [(0, 0), (1, 1), (2, 2)]
        assert a.total_cost == 0.0

    def test_hand_matrix(self):
        a = hungarian([[4, 1, 3], [2, 0, 5], [3, 2, 2]])
        assert a.total_cost == 5
        assert a.pairs == [(0, 1), (1, 0), (2, 2)]
        assert brute_force_assignment([[4, 1, 3], [2, 0, 5], [3, 2, 2]]) == (5.0, a.pairs)

    def test_rectangular_wide(self):
        cost = np.array([[3.0, 1.0, 2.0], [1.0, 4.0, 0.5]])
        a = hungarian(cost)
        assert len(a.pairs) == 2
        assert (a.total_cost, a.pairs) == brute_force_assignment(cost)
        assert a.unmatched_cols == [c for c in range(3) if c not in dict(a.pairs).values()]

    def test_rectangular_tall(self):
        cost = np.array([[3.0, 1.0], [1.0, 4.0], [0.0, 0.0]])
        a = hungarian(cost)
        assert (a.total_cost, a.pairs) == brute_force_assignment(cost)
        assert len(a.unmatched_rows) == 1

    def test_all_ties_picks_lexicographic_smallest(self):
        assert hungarian(np.zeros((3, 3))).pairs == [(0, 0), (1, 1), (2, 2)]
        assert hungarian(np.zeros((3, 2))).pairs == [(0, 0), (1, 1)]
        assert hungarian(np.zeros((2, 4))).pairs == [(0, 0), (1, 1)]

    def test_single(self):
        a = hungarian([[2.5]])
        assert a.pairs == [(0, 0)] and a.total_cost == 2.5

    @pytest.mark.parametrize("bad", [[[1, np.nan]], [[np.inf]], np.zeros((0, 3))])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            hungarian(bad)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1), st.booleans())
    def test_matches_brute_force(self, r, q, seed, integer):
        rng = np.random.default_rng(seed)
        cost = rng.integers(0, 4, (r, q)).astype(float) if integer else rng.random((r, q))
        a = hungarian(cost)
        assert (a.total_cost, a.pairs) == brute_force_assignment(cost)
        assert len(a.pairs) == min(r, q)

    @settings(max_examples=150, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.integers(-5, 5),
           st.integers(0, 5), st.booleans())
    def test_square_shift_invariance(self, n, seed, shift, line, by_row):
        cost = np.random.default_rng(seed).integers(0, 10, (n, n)).astype(float)
        shifted = cost.copy()
        if by_row:
            shifted[line % n] += shift
        else:
            shifted[:, line % n] += shift
        assert hungarian(cost).pairs == hungarian(shifted).pairs

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 3), st.integers(0, 2**32 - 1), st.integers(-5, 5))
    def test_rectangular_shift_on_saturated_side(self, r, extra, seed, shift):
        # every row of a wide matrix is matched, so a row shift moves all optima equally
        cost = np.random.default_rng(seed).integers(0, 10, (r, r + extra)).astype(float)
        shifted = cost.copy()
        shifted[seed % r] += shift
        assert hungarian(cost).pairs == hungarian(shifted).pairs
        assert hungarian(cost.T).pairs == hungarian(shifted.T).pairs


class TestPairCost:
    def test_perfect(self):
        b = Box3D((0, 0, 0), (1, 2, 3))
        assert pair_cost(b, onehot(2, 19), b, 2) == 0.0

    def test_uniform(self):
        b = Box3D((0, 0, 0), (1, 1, 1))
        assert pair_cost(b, np.full(19, 1 / 19), b, 4) == pytest.approx(1 - 1 / 19, abs=1e-12)

    def test_hand_example(self):
        # giou 0.5, p(gt) 0.8, center L1 0.2, size L1 0.1 -> 5 + 0.2 + 1 + 0.1
        w = SetLossWeights()
        assert w.giou * 0.5 + w.cls * 0.2 + w.center * 0.2 + w.size * 0.1 == pytest.approx(6.3)
        gt = Box3D((0, 0, 0), (1, 1, 1))
        pred = Box3D((0.1, 0.1, 0), (1.1, 1, 1))
        expected = 10 * (1 - giou3d(pred, gt)) + (1 - 0.8) + 5 * 0.2 + 1 * 0.1
        assert pair_cost(pred, [0.8, 0.1, 0.1], gt, 0) == pytest.approx(expected, abs=1e-12)

    def test_class_out_of_range(self):
        b = Box3D((0, 0, 0), (1, 1, 1))
        with pytest.raises(ValueError):
            pair_cost(b, [0.5, 0.5], b, 1)

    def test_default_weights(self):
        assert SetLossWeights() == SetLossWeights(10, 1, 5, 1)
        assert TotalLossWeights() == TotalLossWeights(10, 1, 5, 8)


class TestMatchScene:
    def test_one_to_one(self):
        inst = InstanceSet([3], np.array([[0, 0, 0, 1, 1, 1.0]]), [0], [["x"]])
        preds = PredictionSet(np.array([[0.1, 0, 0, 1, 1, 1.0]]), np.array([[0.9, 0.1]]), [""])
        assert match_scene(preds, inst).pairs == [(0, 0)]

    def test_more_instances_than_queries(self):
        s = synthetic(1, (4, 6))
        preds = perturbed_predictions(s, box_noise=0.02, seed=1).subset([0, 1])
        assert len(match_scene(preds, s.instances).pairs) == 2

    def test_no_instances(self):
        preds = PredictionSet(np.array([[0, 0, 0, 1, 1, 1.0]]), np.array([[0.5, 0.5]]), [""])
        a = match_scene(preds, InstanceSet.empty())
        assert a.pairs == [] and a.unmatched_cols == [0]

    def test_perturbed_copies_recover_identity_after_shuffle(self):
        s = synthetic(2)
        n = len(s.instances)
        preds = perturbed_predictions(s, box_noise=0.01, seed=3)
        order = np.random.default_rng(0).permutation(n)
        shuffled = preds.subset(order)
        a = match_scene(shuffled, s.instances)
        assert sorted((r, int(order[c])) for r, c in a.pairs) == [(j, j) for j in range(n)]
        cost = np.sum([v for v in cost_components(shuffled, s.instances).values()], axis=0)
        assert brute_force_assignment(cost)[1] == match_scene(
            shuffled, s.instances, SetLossWeights(1, 1, 1, 1)).pairs

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 500))
    def test_instance_permutation_invariance(self, seed):
        s = synthetic(seed)
        preds = perturbed_predictions(s, box_noise=0.1, seed=seed, duplicate_count=2)
        base = match_scene(preds, s.instances)
        order = np.random.default_rng(seed).permutation(len(s.instances))
        perm = match_scene(preds, s.instances.permuted(order))
        by_id = {s.instances.ids[r]: c for r, c in base.pairs}
        by_id_perm = {s.instances.ids[order[r]]: c for r, c in perm.pairs}
        assert by_id == by_id_perm


class TestSetLoss:
    def test_perfect_predictions(self):
        s = synthetic(4)
        n, c = len(s.instances), 18
        boxes = np.vstack([s.instances.boxes, [[9, 9, 9, 1, 1, 1]]])
        probs = np.vstack([np.stack([onehot(k, c + 1) for k in s.instances.class_ids]),
                           onehot(c, c + 1)])
        preds = PredictionSet(boxes, probs, [""] * (n + 1))
        a = match_scene(preds, s.instances)
        loss = set_loss(preds, s.instances, a)
        assert loss.total == 0.0

    def test_single_pair_hand(self):
        gt = InstanceSet([0], np.array([[0, 0, 0, 1, 1, 1.0]]), [0], [["x"]])
        preds = PredictionSet(np.array([[0.5, 0, 0, 1, 1, 1.0]]), np.array([[0.8, 0.2]]), [""])
        a = match_scene(preds, gt)
        loss = set_loss(preds, gt, a)
        # IoU of unit cubes shifted by 0.5 is 1/3; the enclosing box equals the union
        assert loss.giou == pytest.approx(2 / 3)
        assert loss.center == pytest.approx(0.5)
        assert loss.size == 0.0
        assert loss.cls == pytest.approx(-math.log(0.8))
        assert loss.total == pytest.approx(10 * 2 / 3 - math.log(0.8) + 5 * 0.5)

    def test_only_no_object_term(self):
        preds = PredictionSet(np.array([[0, 0, 0, 1, 1, 1.0]] * 2),
                              np.array([[0.5, 0.5], [0.25, 0.75]]), ["", ""])
        a = match_scene(preds, InstanceSet.empty())
        loss = set_loss(preds, InstanceSet.empty(), a)
        assert (loss.giou, loss.center, loss.size) == (0.0, 0.0, 0.0)
        assert loss.cls == pytest.approx((-math.log(0.5) - math.log(0.75)) / 2)

    def test_zero_probability_is_clamped(self):
        preds = PredictionSet(np.array([[0, 0, 0, 1, 1, 1.0]]), np.array([[1.0, 0.0]]), [""])
        loss = set_loss(preds, InstanceSet.empty(), match_scene(preds, InstanceSet.empty()))
        assert loss.cls == pytest.approx(-math.log(1e-9))

    def test_no_object_weight(self):
        gt = InstanceSet([0], np.array([[0, 0, 0, 1, 1, 1.0]]), [0], [["x"]])
        preds = PredictionSet(np.array([[0, 0, 0, 1, 1, 1.0], [5, 5, 5, 1, 1, 1.0]]),
                              np.array([[0.5, 0.5], [0.5, 0.5]]), ["", ""])
        a = match_scene(preds, gt)
        loss = set_loss(preds, gt, a, no_object_weight=0.1)
        assert loss.cls == pytest.approx(math.log(2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 200), arrays(np.float64, 4, elements=st.floats(0, 10)),
           st.integers(0, 3), st.floats(0, 10))
    def test_linear_in_each_weight(self, seed, alpha, which, new):
        s = synthetic(seed)
        preds = perturbed_predictions(s, box_noise=0.1, class_error_rate=0.3, seed=seed,
                                      duplicate_count=2)
        a = match_scene(preds, s.instances)
        base = set_loss(preds, s.instances, a, SetLossWeights(*alpha))
        comps = [base.giou, base.cls, base.center, base.size]
        changed = alpha.copy()
        changed[which] = new
        other = set_loss(preds, s.instances, a, SetLossWeights(*changed))
        assert other.total == pytest.approx(
            base.total + (new - alpha[which]) * comps[which], rel=1e-9, abs=1e-9)


class TestCaptions:
    def test_cardinality(self):
        s = synthetic(5, (3, 3))
        preds = perturbed_predictions(s, box_noise=0.02, seed=0, pad_to=256)
        a = match_scene(preds, s.instances)
        sentences = sample_captions(s.instances, np.random.default_rng(0))
        targets = assign_captions(sentences, a, len(preds))
        assert len(targets) == 256
        assert sum(t is not None for t in targets) == 3 == len(a.pairs)

    def test_empty_scene(self):
        preds = PredictionSet(np.array([[0, 0, 0, 1, 1, 1.0]]), np.array([[0.5, 0.5]]), [""])
        a = match_scene(preds, InstanceSet.empty())
        assert assign_captions([], a, 1) == [None]

    def test_missing_sentence(self):
        preds = PredictionSet(np.array([[0, 0, 0, 1, 1, 1.0]]), np.array([[0.5, 0.5]]), [""])
        gt = InstanceSet([0], np.array([[0, 0, 0, 1, 1, 1.0]]), [0], [["x"]])
        with pytest.raises(ValueError):
            assign_captions([], match_scene(preds, gt), 1)
        with pytest.raises(ValueError):
            sample_captions(InstanceSet([0], np.array([[0, 0, 0, 1, 1, 1.0]]), [0], [[]]),
                            np.random.default_rng(0))

    def test_permuted_instances_same_mapping(self):
        s = synthetic(6)
        preds = perturbed_predictions(s, box_noise=0.05, seed=6, pad_to=32)
        sentences = [c[0] for c in s.instances.corpora]
        base = assign_captions(sentences, match_scene(preds, s.instances), len(preds))
        order = np.random.default_rng(1).permutation(len(s.instances))
        inst = s.instances.permuted(order)
        perm = assign_captions([c[0] for c in inst.corpora], match_scene(preds, inst),
                               len(preds))
        assert base == perm


class TestTotalLoss:
    def test_zero(self):
        assert total_loss(0, [0] * 8, 0) == 0

    def test_hand(self):
        assert total_loss(1, [0.5] * 8, 2) == 24

    def test_projection(self):
        assert total_loss(3, [0.25] * 8, 7, TotalLossWeights(0, 1, 0)) == 2

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            total_loss(1, [0.5] * 7, 2)


class TestSetCriterion:
    def test_matches_functions(self):
        s = synthetic(8)
        preds = perturbed_predictions(s, box_noise=0.1, seed=8, pad_to=20)
        crit = SetCriterion()
        assert crit.match(preds, s.instances).pairs == match_scene(preds, s.instances).pairs
        assert crit.loss(preds, s.instances).total == pytest.approx(
            set_loss(preds, s.instances, match_scene(preds, s.instances)).total)

    def test_set_params(self):
        crit = SetCriterion().set_params(giou_weight=2.0)
        assert crit.weights.giou == 2.0
