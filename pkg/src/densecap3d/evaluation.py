"""Dense-captioning evaluation: m@kIoU and detection AP / AR.

Protocol per scene: optional NMS on the proposals, then each ground-truth
instance is assigned the remaining proposal with the largest IoU (greedy,
globally largest pair first, one proposal per instance). The caption
metric of an instance counts only when its IoU reaches the threshold k,
and the dataset score averages over all annotated instances.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import textmetrics
from .geom3d import nms, pairwise_iou
from .scene import InstanceSet, PredictionSet
from .textmetrics import DfTable, build_df, tokenize

ALL_METRICS = ("cider_d", "bleu4", "meteor_lite", "rougel")


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = (0.25, 0.5)
    nms_threshold: float = 0.25
    apply_nms: bool = True
    metrics: tuple[str, ...] = ALL_METRICS
    ap_interpolation: str = "all"  # "all" (every point) or "11point"

    def __post_init__(self):
        for k in self.iou_thresholds:
            if not 0.0 < k <= 1.0:
                raise ValueError(f"IoU threshold {k} outside (0, 1]")
        if not 0.0 <= self.nms_threshold <= 1.0:
            raise ValueError("nms_threshold must lie in [0, 1]")
        for m in self.metrics:
            if m not in textmetrics.METRICS:
                raise ValueError(f"unknown metric {m!r}")
        if self.ap_interpolation not in ("all", "11point"):
            raise ValueError("ap_interpolation must be 'all' or '11point'")


@dataclass
class MetricReport:
    m_at_kiou: dict[str, dict[float, float]]
    ap: dict[float, dict[str, float]]
    mAP: dict[float, float]
    AR: dict[float, float]
    num_instances: int
    num_proposals: int
    num_proposals_kept: int
    iou_thresholds: tuple[float, ...] = field(default=(0.25, 0.5))

    def value(self, metric: str, k: float) -> float:
        """Look up e.g. ``value("C", 0.5)`` or ``value("cider_d", 0.5)``."""
        name = textmetrics.METRICS.get(metric, metric)
        return self.m_at_kiou[name][k]

    def to_dict(self) -> dict:
        def num(x):
            return float(f"{x:.9g}")

        def key(k):
            return f"{k:g}"

        return {
            "m_at_kiou": {m: {key(k): num(v) for k, v in row.items()}
                          for m, row in self.m_at_kiou.items()},
            "detection": {
                key(k): {"AP": {c: num(v) for c, v in self.ap[k].items()},
                         "mAP": num(self.mAP[k]), "AR": num(self.AR[k])}
                for k in self.iou_thresholds},
            "counts": {"instances": self.num_instances,
                       "proposals": self.num_proposals,
                       "proposals_kept": self.num_proposals_kept},
        }

    def to_table(self) -> str:
        """Plain-text table: one caption block per IoU threshold, then detection."""
        names = [n for n in ("C", "B-4", "M", "R") if n in self.m_at_kiou]
        head = [f"{n}@{k:g}" for k in self.iou_thresholds for n in names]
        vals = [f"{100.0 * self.m_at_kiou[n][k]:.2f}"
                for k in self.iou_thresholds for n in names]
        width = [max(len(h), len(v)) for h, v in zip(head, vals)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(head, width)),
                 "  ".join(v.rjust(w) for v, w in zip(vals, width))]
        det_head, det_vals = [], []
        for k in self.iou_thresholds:
            tag = f"{round(100 * k)}"
            det_head += [f"mAP{tag}", f"AR{tag}"]
            det_vals += [f"{100.0 * self.mAP[k]:.2f}", f"{100.0 * self.AR[k]:.2f}"]
        width = [max(len(h), len(v)) for h, v in zip(det_head, det_vals)]
        lines += ["", "  ".join(h.rjust(w) for h, w in zip(det_head, width)),
                  "  ".join(v.rjust(w) for v, w in zip(det_vals, width)),
                  "", f"instances={self.num_instances} proposals={self.num_proposals} "
                      f"kept={self.num_proposals_kept}"]
        return "\n".join(lines) + "\n"


def assign_instances(pred_boxes, gt_boxes) -> tuple[list[Optional[int]], np.ndarray]:
    """Greedy largest-IoU assignment without replacement.

    Returns, per instance, the proposal index (None when nothing with IoU > 0
    is left) and the IoU of that pair (0 when unassigned). Equal IoUs are
    taken in (instance, proposal) index order.
    """
    iou = pairwise_iou(gt_boxes, pred_boxes)
    n_gt = iou.shape[0]
    assigned: list[Optional[int]] = [None] * n_gt
    best = np.zeros(n_gt)
    if iou.size == 0:
        return assigned, best
    gi, pi = np.nonzero(iou > 0.0)
    order = np.lexsort((pi, gi, -iou[gi, pi]))
    used_p = set()
    remaining = n_gt
    for o in order:
        g, p = int(gi[o]), int(pi[o])
        if assigned[g] is not None or p in used_p:
            continue
        assigned[g] = p
        best[g] = iou[g, p]
        used_p.add(p)
        remaining -= 1
        if remaining == 0:
            break
    return assigned, best


def m_at_kiou(metric_values: Sequence[float], ious: Sequence[float], k: float) -> float:
    """Mean over instances of ``metric * [IoU >= k]``; unassigned instances pass IoU 0."""
    vals = np.asarray(metric_values, dtype=np.float64)
    ious = np.asarray(ious, dtype=np.float64)
    if vals.shape != ious.shape:
        raise ValueError("metric_values and ious must align")
    if vals.size == 0:
        return 0.0
    return float(np.sum(np.where(ious >= k, vals, 0.0)) / vals.size)


def caption_scores(candidates: Sequence[Optional[str]], corpora: Sequence[Sequence[str]],
                   metric: str, df: DfTable = None) -> np.ndarray:
    """Metric value per instance; instances without a candidate score 0."""
    out = np.zeros(len(candidates))
    for i, (cand, corpus) in enumerate(zip(candidates, corpora)):
        if not corpus:
            raise ValueError(f"instance {i} has no reference captions")
        if cand is None:
            continue
        out[i] = textmetrics.score(metric, tokenize(cand), [tokenize(c) for c in corpus], df)
    return out


def _average_precision(tp: np.ndarray, n_gt: int, interpolation: str) -> float:
    if n_gt == 0 or tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    if interpolation == "11point":
        return float(np.mean([precision[recall >= t].max() if np.any(recall >= t) else 0.0
                              for t in np.linspace(0.0, 1.0, 11)]))
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def detection_ap(preds: Sequence[PredictionSet], gts: Sequence[InstanceSet], k: float,
                 interpolation: str = "all", ious: Sequence[np.ndarray] = None
                 ) -> tuple[dict[int, float], float]:
    """Per-class AP over all scenes and their mean over classes present in gt.

    Proposals are ranked by ``1 - P(no object)`` and labelled with their most
    likely semantic class. Each proposal takes the free ground-truth object
    of that class with the highest IoU >= k, otherwise it is a false positive.
    """
    if ious is None:
        ious = [pairwise_iou(p.boxes, g.boxes) for p, g in zip(preds, gts)]
    classes = sorted({int(c) for g in gts for c in g.class_ids})
    ap = {}
    for cls in classes:
        n_gt = sum(int(np.sum(g.class_ids == cls)) for g in gts)
        dets = []  # (-score, scene, proposal)
        for s, p in enumerate(preds):
            if len(p) == 0:
                continue
            sc = p.scores
            for q in np.flatnonzero(p.labels == cls):
                dets.append((-sc[q], s, int(q)))
        dets.sort()
        taken = [np.zeros(len(g), dtype=bool) for g in gts]
        tp = np.zeros(len(dets))
        for d, (_, s, q) in enumerate(dets):
            row = np.where((gts[s].class_ids == cls) & ~taken[s], ious[s][q], -1.0)
            if row.size == 0:
                continue
            j = int(np.argmax(row))
            if row[j] >= k:
                taken[s][j] = True
                tp[d] = 1.0
        ap[cls] = _average_precision(tp, n_gt, interpolation)
    return ap, (float(np.mean(list(ap.values()))) if ap else 0.0)


def detection_ar(preds: Sequence[PredictionSet], gts: Sequence[InstanceSet], k: float,
                 ious: Sequence[np.ndarray] = None) -> float:
    """Fraction of ground-truth objects recalled at IoU >= k by a same-class proposal.

    Proposals and objects are paired one-to-one, largest IoU first.
    """
    if ious is None:
        ious = [pairwise_iou(p.boxes, g.boxes) for p, g in zip(preds, gts)]
    total = sum(len(g) for g in gts)
    if total == 0:
        return 0.0
    hit = 0
    for p, g, iou in zip(preds, gts, ious):
        if len(p) == 0 or len(g) == 0:
            continue
        ok = (p.labels[:, None] == g.class_ids[None, :]) & (iou >= k)
        qi, gi = np.nonzero(ok)
        order = np.lexsort((gi, qi, -iou[qi, gi]))
        used_q, used_g = set(), set()
        for o in order:
            q, j = int(qi[o]), int(gi[o])
            if q in used_q or j in used_g:
                continue
            used_q.add(q)
            used_g.add(j)
        hit += len(used_g)
    return hit / total


@dataclass
class _SceneResult:
    kept: PredictionSet
    ious: np.ndarray            # kept proposals x instances
    inst_iou: np.ndarray        # per instance, IoU of its assigned proposal
    scores: dict[str, np.ndarray]


def _evaluate_scene(pred: PredictionSet, gt: InstanceSet, config: EvalConfig,
                    df: DfTable) -> _SceneResult:
    if config.apply_nms and len(pred):
        pred = pred.subset(nms(pred.boxes, pred.scores, config.nms_threshold))
    ious = pairwise_iou(pred.boxes, gt.boxes)
    assigned, inst_iou = assign_instances(pred.boxes, gt.boxes)
    candidates = [None if a is None else pred.captions[a] for a in assigned]
    scores = {m: caption_scores(candidates, gt.corpora, m, df) for m in config.metrics}
    return _SceneResult(pred, ious, inst_iou, scores)


def _check_scene_ids(preds: Mapping, gts: Mapping):
    extra = sorted(set(preds) - set(gts))
    if extra:
        raise ValueError(f"predictions for scenes without ground truth: {extra}")


def evaluate(preds: Mapping[str, PredictionSet], gts: Mapping[str, InstanceSet],
             config: EvalConfig = EvalConfig(), class_names: Sequence[str] = None,
             df: DfTable = None, threads: int = 1) -> MetricReport:
    """Run the full protocol over scenes keyed by scene id.

    Scenes missing from ``preds`` count as having no proposals. ``df``
    defaults to document frequencies over the ground-truth corpora. Scenes
    are processed in sorted id order; ``threads`` only changes speed.
    """
    _check_scene_ids(preds, gts)
    ids = sorted(gts)
    gt_list = [gts[s] for s in ids]
    if preds:
        n_cls = next(iter(preds.values())).num_classes
    elif class_names is not None:
        n_cls = len(class_names)
    else:
        n_cls = 1 + max((int(c) for g in gt_list for c in g.class_ids), default=0)
    pred_list = [preds[s] if s in preds else PredictionSet.empty(n_cls) for s in ids]
    if "cider_d" in config.metrics and df is None:
        corpora = [[tokenize(c) for c in corpus] for g in gt_list for corpus in g.corpora]
        df = build_df(corpora) if corpora else None

    def run(i):
        return _evaluate_scene(pred_list[i], gt_list[i], config, df)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(ids))))
    else:
        results = [run(i) for i in range(len(ids))]

    n_inst = sum(len(g) for g in gt_list)
    inst_iou = np.concatenate([r.inst_iou for r in results]) if results else np.zeros(0)
    table = {}
    for m in config.metrics:
        vals = np.concatenate([r.scores[m] for r in results]) if results else np.zeros(0)
        table[textmetrics.METRICS[m]] = {k: m_at_kiou(vals, inst_iou, k)
                                         for k in config.iou_thresholds}
    kept = [r.kept for r in results]
    kept_ious = [r.ious for r in results]
    names = list(class_names) if class_names is not None else None
    ap, mean_ap, ar = {}, {}, {}
    for k in config.iou_thresholds:
        per_class, mean_ap[k] = detection_ap(kept, gt_list, k, config.ap_interpolation, kept_ious)
        ap[k] = {(names[c] if names else str(c)): v for c, v in per_class.items()}
        ar[k] = detection_ar(kept, gt_list, k, kept_ious)
    return MetricReport(
        m_at_kiou=table, ap=ap, mAP=mean_ap, AR=ar, num_instances=n_inst,
        num_proposals=sum(len(p) for p in pred_list),
        num_proposals_kept=sum(len(p) for p in kept),
        iou_thresholds=tuple(config.iou_thresholds))


class DenseCaptionEvaluator(BaseEstimator):
    """Estimator-style front end to :func:`evaluate`.

    ``fit`` stores the ground truth (``{scene_id: InstanceSet}``) and the
    CIDEr document frequencies; ``score`` evaluates predictions and returns
    a :class:`MetricReport`.
    """

    def __init__(self, iou_thresholds=(0.25, 0.5), nms_threshold=0.25, apply_nms=True,
                 metrics=ALL_METRICS, ap_interpolation="all", threads=1):
        self.iou_thresholds = iou_thresholds
        self.nms_threshold = nms_threshold
        self.apply_nms = apply_nms
        self.metrics = metrics
        self.ap_interpolation = ap_interpolation
        self.threads = threads

    def _config(self) -> EvalConfig:
        return EvalConfig(tuple(self.iou_thresholds), self.nms_threshold, self.apply_nms,
                          tuple(self.metrics), self.ap_interpolation)

    def fit(self, X: Mapping[str, InstanceSet], y=None, class_names=None, df_corpus=None):
        self._config()
        self.ground_truth_ = dict(X)
        self.class_names_ = list(class_names) if class_names is not None else None
        if df_corpus is None:
            df_corpus = [[tokenize(c) for c in corpus]
                         for g in self.ground_truth_.values() for corpus in g.corpora]
        self.df_ = build_df(df_corpus) if df_corpus else None
        return self

    def score(self, X: Mapping[str, PredictionSet], y=None) -> MetricReport:
        check_is_fitted(self, "ground_truth_")
        return evaluate(X, self.ground_truth_, self._config(), self.class_names_,
                        self.df_, self.threads)
