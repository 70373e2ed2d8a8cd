"""Vote queries: shift sampled seed points toward object centers, gather features.

The offset network is abstracted as an ``OffsetPredictor``: any pure
callable ``(position, feature) -> offset`` in meters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .pointset import Aggregator, PointCloud, fps, max_pool_aggregator, set_abstraction
from .scene import InstanceSet

OffsetPredictor = Callable[[np.ndarray, np.ndarray], np.ndarray]

DEFAULT_NUM_QUERIES = 256


def zero_predictor(position, feature):
    return np.zeros(3)


@dataclass
class VoteQuerySet:
    seed_indices: np.ndarray
    positions: np.ndarray
    features: np.ndarray

    def __len__(self):
        return len(self.seed_indices)


def predict_votes(cloud: PointCloud, predictor: OffsetPredictor) -> np.ndarray:
    """Vote position of every point: its position plus the predicted offset."""
    if len(cloud) == 0:
        raise ValueError("cannot vote on an empty point cloud")
    offsets = np.array([np.asarray(predictor(p, f), dtype=np.float64).reshape(3)
                        for p, f in zip(cloud.positions, cloud.features)])
    return cloud.positions + offsets


def build_vote_queries(cloud: PointCloud, predictor: OffsetPredictor,
                       nq: int = DEFAULT_NUM_QUERIES, gather_radius: float = 0.2,
                       max_samples: int = 16,
                       aggregator: Aggregator = max_pool_aggregator) -> VoteQuerySet:
    """Sample ``nq`` seeds by FPS (start 0), move each to its vote, gather features there."""
    if not 1 <= nq <= len(cloud):
        raise ValueError(f"nq must lie in [1, {len(cloud)}], got {nq}")
    votes = predict_votes(cloud, predictor)
    seeds = np.asarray(fps(cloud.positions, nq, 0))
    p_vq = votes[seeds]
    f_vq = set_abstraction(p_vq, cloud, gather_radius, max_samples, aggregator)
    return VoteQuerySet(seeds, p_vq, f_vq)


def point_membership(cloud: PointCloud, instances: InstanceSet) -> np.ndarray:
    """Per-point index into ``instances`` (-1 for background).

    Uses ``cloud.instance_ids`` when present; otherwise falls back to box
    containment, the lowest-index containing box winning.
    """
    n = len(cloud)
    if cloud.instance_ids is not None:
        lookup = {iid: j for j, iid in enumerate(instances.ids)}
        out = np.full(n, -1, dtype=np.int64)
        for i, iid in enumerate(cloud.instance_ids):
            if iid < 0:
                continue
            if iid not in lookup:
                raise KeyError(f"point {i} references unknown instance id {int(iid)}")
            out[i] = lookup[iid]
        return out
    out = np.full(n, -1, dtype=np.int64)
    for j in range(len(instances) - 1, -1, -1):
        out[instances.box(j).contains(cloud.positions)] = j
    return out


def vote_loss(votes, cloud: PointCloud, instances: InstanceSet) -> float:
    """Mean L1 distance from each point's vote to its instance center.

    Normalized by the total point count; background points contribute 0.
    """
    votes = np.asarray(votes, dtype=np.float64).reshape(-1, 3)
    if len(votes) != len(cloud):
        raise ValueError(f"{len(votes)} votes for {len(cloud)} points")
    if len(cloud) == 0:
        return 0.0
    owner = point_membership(cloud, instances)
    fg = owner >= 0
    if not fg.any():
        return 0.0
    l1 = np.abs(votes[fg] - instances.centers[owner[fg]]).sum()
    return float(l1 / len(cloud))


class VoteQueryGenerator(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`build_vote_queries`.

    ``transform`` maps a :class:`PointCloud` to a :class:`VoteQuerySet`.
    Nothing is learned; ``fit`` only validates parameters.
    """

    def __init__(self, n_queries=DEFAULT_NUM_QUERIES, predictor: Optional[OffsetPredictor] = None,
                 gather_radius=0.2, max_samples=16, aggregator: Optional[Aggregator] = None):
        self.n_queries = n_queries
        self.predictor = predictor
        self.gather_radius = gather_radius
        self.max_samples = max_samples
        self.aggregator = aggregator

    def fit(self, X=None, y=None):
        if self.n_queries < 1:
            raise ValueError("n_queries must be positive")
        if self.gather_radius <= 0:
            raise ValueError("gather_radius must be positive")
        return self

    def transform(self, X: PointCloud) -> VoteQuerySet:
        return build_vote_queries(X, self.predictor or zero_predictor, self.n_queries,
                                  self.gather_radius, self.max_samples,
                                  self.aggregator or max_pool_aggregator)
