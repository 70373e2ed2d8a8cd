import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from densecap3d.pointset import (
    FourierPEConfig, PointCloud, ball_query, fourier_pe, fps, load_binary, load_jsonl,
    max_pool_aggregator, nearest_tokens, save_binary, save_jsonl, set_abstraction,
)

from oracles import fps_brute_force

# micrometre grid: squared distances of smaller offsets underflow float64
small_clouds = arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)),
                      elements=st.integers(-5_000_000, 5_000_000).map(lambda v: v * 1e-6))


def step_optimal(pts, picks):
    for step in range(1, len(picks)):
        prefix = picks[:step]
        md = [min(math.dist(pts[i], pts[j]) for j in prefix) if i not in prefix else -1
              for i in range(len(pts))]
        best = max(md)
        if md[picks[step]] != best or picks[step] != md.index(best):
            return False
    return True


class TestFPS:
    def test_collinear(self):
        pts = [[x, 0, 0] for x in range(11)]
        assert fps(pts, 3, 0) == [0, 10, 5]
        assert fps_brute_force(pts, 3, 0) == [[0, 10, 5]]

    def test_k_equals_one(self):
        assert fps(np.eye(3), 1, 2) == [2]

    def test_k_equals_n_is_permutation(self):
        rng = np.random.default_rng(0)
        pts = rng.random((9, 3))
        assert sorted(fps(pts, 9)) == list(range(9))

    @pytest.mark.parametrize("k", [0, 4])
    def test_k_out_of_range(self, k):
        with pytest.raises(ValueError):
            fps(np.eye(3), k)

    def test_start_out_of_range(self):
        with pytest.raises(ValueError):
            fps(np.eye(3), 1, 3)

    def test_tie_goes_to_lower_index(self):
        # points 1 and 2 are equidistant from 0
        assert fps([[0, 0, 0], [1, 0, 0], [-1, 0, 0]], 2) == [0, 1]

    def test_small_instances_match_enumeration(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            pts = rng.integers(0, 4, (6, 3)).astype(float)
            start = int(rng.integers(6))
            assert fps_brute_force(pts, 4, start) == [fps(pts, 4, start)]

    @settings(max_examples=100, deadline=None)
    @given(small_clouds, st.data())
    def test_greedy_step_optimality(self, pts, data):
        k = data.draw(st.integers(1, len(pts)))
        start = data.draw(st.integers(0, len(pts) - 1))
        picks = fps(pts, k, start)
        assert picks[0] == start
        assert len(set(picks)) == k
        assert step_optimal(pts, picks)


class TestBallQuery:
    def grid(self):
        # 5 x 5 grid with unit spacing in the xy plane, row-major indices
        return PointCloud([[x, y, 0] for y in range(5) for x in range(5)])

    def test_isolated_point(self):
        cloud = PointCloud([[0, 0, 0], [5, 5, 5]])
        res = ball_query([[0, 0, 0]], cloud, 0.1, 8)
        assert res.groups[0].tolist() == [0]
        assert not res.fallback[0]

    def test_fallback_to_nearest(self):
        cloud = PointCloud([[0, 0, 0], [5, 5, 5]])
        res = ball_query([[4, 4, 4]], cloud, 0.1, 8)
        assert res.groups[0].tolist() == [1]
        assert res.fallback[0]

    def test_grid_seven_in_range(self):
        # center (2, 1.6), radius 1.45 on a unit grid:
        # (1,1) (2,1) (3,1) at 1.166 / 0.6 / 1.166, (1,2) (2,2) (3,2) at 1.077 / 0.4 / 1.077,
        # (2,3) at 1.4; everything else is farther -> 7 points, indices 6 7 8 11 12 13 17
        cloud = self.grid()
        center = np.array([2.0, 1.6, 0.0])
        d = np.linalg.norm(cloud.positions - center, axis=1)
        assert np.flatnonzero(d <= 1.45).tolist() == [6, 7, 8, 11, 12, 13, 17]
        res = ball_query([center], cloud, 1.45, 4)
        assert res.groups[0].tolist() == [6, 7, 8, 11]
        assert not res.fallback[0]

    def test_empty_cloud(self):
        with pytest.raises(ValueError):
            ball_query([[0, 0, 0]], PointCloud(np.zeros((0, 3))), 1.0, 2)

    @settings(max_examples=60, deadline=None)
    @given(small_clouds, st.floats(0.1, 4), st.integers(1, 10))
    def test_groups_within_radius(self, pts, radius, m):
        cloud = PointCloud(pts)
        centers = pts[: min(3, len(pts))] + 0.05
        res = ball_query(centers, cloud, radius, m)
        for c, g, fb in zip(centers, res.groups, res.fallback):
            assert 1 <= len(g) <= m
            d = np.linalg.norm(pts[g] - c, axis=1)
            if fb:
                assert len(g) == 1
                assert d[0] == np.min(np.linalg.norm(pts - c, axis=1))
            else:
                assert np.all(d <= radius)
                assert list(g) == sorted(g)


class TestSetAbstraction:
    def test_single_point(self):
        cloud = PointCloud([[1, 2, 3]], [[0.5, -2.0]])
        out = set_abstraction([[1, 2, 3]], cloud, 0.1, 4)
        np.testing.assert_array_equal(out[0], [0, 0, 0, 0.5, -2.0])

    def test_elementwise_max(self):
        cloud = PointCloud([[0, 0, 0], [0.1, 0, 0]], [[1, 0], [0, 1]])
        out = set_abstraction([[0, 0, 0]], cloud, 1.0, 4)
        np.testing.assert_array_equal(out[0, 3:], [1, 1])

    def test_three_point_hand_oracle(self):
        cloud = PointCloud([[0.1, -0.2, 0.0], [-0.3, 0.1, 0.2], [0.0, 0.0, -0.1]],
                           [[3.0], [-1.0], [2.0]])
        out = set_abstraction([[0, 0, 0]], cloud, 1.0, 8)
        np.testing.assert_allclose(out[0], [0.1, 0.1, 0.2, 3.0])

    def test_relative_positions(self):
        cloud = PointCloud([[5, 5, 5]], [[1.0]])
        out = set_abstraction([[4.9, 5, 5]], cloud, 0.5, 1)
        np.testing.assert_allclose(out[0], [0.1, 0, 0, 1.0])

    def test_inconsistent_aggregator(self):
        cloud = PointCloud([[0, 0, 0], [3, 3, 3], [3.1, 3, 3]])

        def bad(rel, feat):
            return np.zeros(len(rel))

        with pytest.raises(ValueError):
            set_abstraction([[0, 0, 0], [3, 3, 3]], cloud, 0.5, 4, bad)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (6, 5), elements=st.floats(-3, 3)), st.randoms())
    def test_reference_aggregator_permutation_invariant(self, rows, rnd):
        order = list(range(6))
        rnd.shuffle(order)
        a = max_pool_aggregator(rows[:, :3], rows[:, 3:])
        b = max_pool_aggregator(rows[order, :3], rows[order, 3:])
        np.testing.assert_array_equal(a, b)


class TestFourierPE:
    def test_origin(self):
        cfg = FourierPEConfig(num_bands=4, max_frequency=8)
        v = fourier_pe([0, 0, 0], cfg).reshape(3, 2, 4)
        np.testing.assert_array_equal(v[:, 0], 0)
        np.testing.assert_array_equal(v[:, 1], 1)

    def test_quarter_period(self):
        v = fourier_pe([0.25, 0, 0], FourierPEConfig(num_bands=1, max_frequency=1))
        assert v[0] == pytest.approx(1.0)
        assert v[1] == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_array_equal(v[2:], [0, 1, 0, 1])

    def test_frequencies_geometric(self):
        np.testing.assert_allclose(FourierPEConfig(4, 8).frequencies, [1, 2, 4, 8])

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            FourierPEConfig(num_bands=0)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 3, elements=st.floats(-10, 10)), st.integers(1, 40))
    def test_shape_and_range(self, pos, bands):
        cfg = FourierPEConfig(num_bands=bands)
        v = fourier_pe(pos, cfg)
        assert v.shape == (cfg.output_dim,) == (6 * bands,)
        assert np.all(np.abs(v) <= 1.0)


class TestNearestTokens:
    def test_order_and_ties(self):
        tokens = [[1, 0, 0], [-1, 0, 0], [0, 3, 0], [0, 0, 0.5]]
        idx = nearest_tokens([[0, 0, 0]], tokens, 3)
        assert idx.tolist() == [[3, 0, 1]]

    def test_k_bounds(self):
        with pytest.raises(ValueError):
            nearest_tokens([[0, 0, 0]], [[1, 1, 1]], 2)


class TestSerialization:
    def cloud(self):
        rng = np.random.default_rng(1)
        return PointCloud(rng.random((20, 3)).astype(np.float32),
                          rng.random((20, 2)).astype(np.float32),
                          rng.integers(-1, 4, 20))

    def test_binary_round_trip(self, tmp_path):
        c = self.cloud()
        save_binary(c, tmp_path / "c.bin")
        back = load_binary(tmp_path / "c.bin")
        np.testing.assert_array_equal(back.positions, c.positions)
        np.testing.assert_array_equal(back.features, c.features)
        np.testing.assert_array_equal(back.instance_ids, c.instance_ids)
        assert (tmp_path / "c.bin").stat().st_size == 12 + 20 * 5 * 4 + 20 * 4

    def test_binary_without_ids(self, tmp_path):
        c = PointCloud(np.ones((3, 3)))
        save_binary(c, tmp_path / "c.bin")
        back = load_binary(tmp_path / "c.bin")
        assert back.instance_ids is None
        assert back.num_features == 0

    def test_jsonl_round_trip(self, tmp_path):
        c = self.cloud()
        save_jsonl(c, tmp_path / "c.jsonl")
        back = load_jsonl(tmp_path / "c.jsonl")
        np.testing.assert_allclose(back.positions, c.positions)
        np.testing.assert_array_equal(back.instance_ids, c.instance_ids)

    def test_row_count_mismatch(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((3, 3)), np.zeros((2, 1)))
