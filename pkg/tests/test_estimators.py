import numpy as np
import pytest
from sklearn.base import clone

from densecap3d.assignment import SetCriterion
from densecap3d.evaluation import DenseCaptionEvaluator
from densecap3d.pointset import FarthestPointSampler, fps
from densecap3d.textmetrics import CiderD
from densecap3d.votequery import VoteQueryGenerator

ESTIMATORS = [
    SetCriterion(giou_weight=3.0),
    DenseCaptionEvaluator(nms_threshold=0.4),
    FarthestPointSampler(n_samples=5),
    CiderD(sigma=4.0),
    VoteQueryGenerator(n_queries=8),
]


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_clone_keeps_params(est):
    twin = clone(est)
    assert twin is not est
    assert twin.get_params() == est.get_params()


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_set_params_round_trip(est):
    params = est.get_params()
    twin = clone(est).set_params(**params)
    assert twin.get_params() == params


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_repr_mentions_changed_param(est):
    changed = {k for k, v in est.get_params().items()
               if type(est)().get_params()[k] != v}
    assert all(k in repr(est) for k in changed)


def test_fps_sampler():
    pts = np.random.default_rng(0).random((40, 3))
    sampler = FarthestPointSampler(n_samples=6, start_index=3)
    assert sampler.fit(pts).sample_indices_.tolist() == fps(pts, 6, 3)
    np.testing.assert_array_equal(sampler.transform(pts), pts[fps(pts, 6, 3)])
