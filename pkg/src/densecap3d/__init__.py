"""Deterministic core of one-stage 3D dense captioning.

Geometry (boxes, IoU, NMS), point sampling and grouping, vote queries,
set-prediction matching and losses, caption decoding and metrics, and the
m@kIoU evaluation protocol.
"""
from .assignment import (Assignment, SetCriterion, SetLoss, SetLossWeights, TotalLossWeights,
                         assign_captions, hungarian, match_scene, pair_cost, set_loss,
                         total_loss)
from .caploss import SequenceLogProb, mle_loss, scst_loss
from .decode import DecodeConfig, beam_search, greedy
from .evaluation import (DenseCaptionEvaluator, EvalConfig, MetricReport, assign_instances,
                         detection_ap, detection_ar, evaluate, m_at_kiou)
from .geom3d import Box3D, corners, giou3d, iou3d, nms
from .pointset import (FarthestPointSampler, FourierPEConfig, PointCloud, ball_query, fourier_pe,
                       fps, set_abstraction)
from .scene import InstanceSet, PredictionSet, Scene
from .textmetrics import CiderD, bleu4, build_df, cider_d, meteor_lite, rougel, tokenize
from .votequery import VoteQueryGenerator, build_vote_queries, predict_votes, vote_loss

__version__ = "0.1.0"

__all__ = [
    "assign_captions", "assign_instances", "Assignment", "ball_query", "beam_search",
    "bleu4", "Box3D", "build_df", "build_vote_queries", "cider_d", "CiderD", "corners",
    "DecodeConfig", "DenseCaptionEvaluator", "detection_ap", "detection_ar", "EvalConfig",
    "evaluate", "FarthestPointSampler", "fourier_pe", "FourierPEConfig", "fps", "giou3d",
    "greedy", "hungarian", "InstanceSet", "iou3d", "m_at_kiou", "match_scene", "meteor_lite",
    "MetricReport", "mle_loss", "nms", "pair_cost", "PointCloud", "predict_votes",
    "PredictionSet", "rougel", "Scene", "scst_loss", "SequenceLogProb", "set_abstraction",
    "set_loss", "SetCriterion", "SetLoss", "SetLossWeights", "tokenize", "total_loss",
    "TotalLossWeights", "vote_loss", "VoteQueryGenerator",
]
