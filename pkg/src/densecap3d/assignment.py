"""Set-prediction matching and losses.

Ground-truth instances are matched one-to-one to queries with a
minimum-cost assignment. The same weighted cost (gIoU, class, center L1,
size L1) drives matching and the set loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .geom3d import Box3D, pairwise_giou
from .scene import InstanceSet, PredictionSet

PROB_EPS = 1e-9


@dataclass(frozen=True)
class SetLossWeights:
    giou: float = 10.0
    cls: float = 1.0
    center: float = 5.0
    size: float = 1.0

    def __post_init__(self):
        if min(self.giou, self.cls, self.center, self.size) < 0:
            raise ValueError("loss weights must be nonnegative")

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "SetLossWeights":
        if len(values) != 4:
            raise ValueError("expected 4 weights: giou, cls, center, size")
        return cls(*map(float, values))


@dataclass(frozen=True)
class TotalLossWeights:
    vote: float = 10.0
    set: float = 1.0
    caption: float = 5.0
    n_dec_layer: int = 8


@dataclass
class Assignment:
    """One-to-one matching between cost-matrix rows and columns.

    For :func:`match_scene` rows are ground-truth instances and columns are
    queries. ``pairs`` is sorted by row.
    """

    pairs: list[tuple[int, int]]
    unmatched_rows: list[int]
    unmatched_cols: list[int]
    total_cost: float

    def col_to_row(self) -> dict[int, int]:
        return {c: r for r, c in self.pairs}

    def row_to_col(self) -> dict[int, int]:
        return dict(self.pairs)


@dataclass
class SetLoss:
    giou: float
    cls: float
    center: float
    size: float
    total: float


# --- Hungarian algorithm ---------------------------------------------------

def _shortest_augmenting_path(cost: np.ndarray):
    """Minimum-cost assignment of every row for an n x m matrix with n <= m.

    Returns (row_to_col, u, v) where u, v are optimal duals: reduced costs
    ``cost[i, j] - u[i] - v[j]`` are nonnegative and zero on matched pairs.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: 1-based row on column j, 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _optimal(cost: np.ndarray):
    """Optimal value, pairs (row -> col dict) and duals for any R x Q matrix."""
    r, q = cost.shape
    if r == 0 or q == 0:
        return 0.0, {}, np.zeros(r), np.zeros(q)
    if r <= q:
        r2c, u, v = _shortest_augmenting_path(cost)
        pairs = {i: int(c) for i, c in enumerate(r2c)}
        return math.fsum(cost[i, c] for i, c in pairs.items()), pairs, u, v
    c2r, u_t, v_t = _shortest_augmenting_path(cost.T)
    pairs = {int(rr): j for j, rr in enumerate(c2r)}
    return math.fsum(cost[i, c] for i, c in pairs.items()), pairs, v_t, u_t


def hungarian(cost) -> Assignment:
    """Minimum-cost one-to-one assignment of ``min(R, Q)`` pairs.

    Among optimal assignments the lexicographically smallest row-sorted
    pair list is returned.
    """
    cost = np.array(cost, dtype=np.float64, ndmin=2)
    if cost.ndim != 2 or cost.shape[0] < 1 or cost.shape[1] < 1:
        raise ValueError(f"cost must be a nonempty 2D matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    n_rows, n_cols = cost.shape
    best, sol, u, v = _optimal(cost)
    tol = 1e-9 * max(1.0, float(np.abs(cost).max())) * max(n_rows, n_cols)
    reduced = cost - u[:, None] - v[None, :]

    rows_left, cols_left = list(range(n_rows)), list(range(n_cols))
    remaining = best
    final: dict[int, int] = {}
    for r in range(n_rows):
        current = sol.get(r)
        rows_left.remove(r)
        # only zero-reduced-cost edges can appear in any optimal assignment
        for c in cols_left:
            if current is not None and c >= current:
                break
            if reduced[r, c] > tol:
                continue
            sub_cols = [cc for cc in cols_left if cc != c]
            val, sub, _, _ = _optimal(cost[np.ix_(rows_left, sub_cols)])
            if cost[r, c] + val <= remaining + tol:
                sol = {**final, r: c}
                sol.update({rows_left[i]: sub_cols[j] for i, j in sub.items()})
                current = c
                break
        if current is not None:
            final[r] = current
            cols_left.remove(current)
            remaining -= cost[r, current]

    pairs = sorted(final.items())
    matched_cols = {c for _, c in pairs}
    return Assignment(
        pairs=[(int(r), int(c)) for r, c in pairs],
        unmatched_rows=[r for r in range(n_rows) if r not in final],
        unmatched_cols=[c for c in range(n_cols) if c not in matched_cols],
        total_cost=math.fsum(cost[r, c] for r, c in pairs),
    )


# --- costs and losses ------------------------------------------------------

def pair_cost(pred_box: Box3D, pred_probs, gt_box: Box3D, gt_class: int,
              weights: SetLossWeights = SetLossWeights()) -> float:
    """Weighted matching cost of one (query, instance) pair."""
    probs = np.asarray(pred_probs, dtype=np.float64)
    if not 0 <= gt_class < len(probs) - 1:
        raise ValueError(f"class {gt_class} out of range for {len(probs) - 1} classes")
    return float(cost_matrix(
        PredictionSet(pred_box.to_array()[None], probs[None], [""]),
        InstanceSet([0], gt_box.to_array()[None], [gt_class], [[]]),
        weights)[0, 0])


def cost_components(preds: PredictionSet, gts: InstanceSet) -> dict[str, np.ndarray]:
    """Unweighted cost terms, each shaped (instances, queries)."""
    if len(gts) and (gts.class_ids.max() >= preds.num_classes or gts.class_ids.min() < 0):
        raise ValueError("ground-truth class id out of range for the prediction distribution")
    return {
        "giou": 1.0 - pairwise_giou(gts.boxes, preds.boxes),
        "cls": 1.0 - preds.class_probs[:, gts.class_ids].T,
        "center": np.abs(gts.boxes[:, None, :3] - preds.boxes[None, :, :3]).sum(-1),
        "size": np.abs(gts.boxes[:, None, 3:] - preds.boxes[None, :, 3:]).sum(-1),
    }


def cost_matrix(preds: PredictionSet, gts: InstanceSet,
                weights: SetLossWeights = SetLossWeights()) -> np.ndarray:
    c = cost_components(preds, gts)
    return (weights.giou * c["giou"] + weights.cls * c["cls"]
            + weights.center * c["center"] + weights.size * c["size"])


def match_scene(preds: PredictionSet, gts: InstanceSet,
                weights: SetLossWeights = SetLossWeights()) -> Assignment:
    """Hungarian matching with rows = instances and columns = queries."""
    if len(preds) == 0:
        raise ValueError("need at least one query to match")
    if len(gts) == 0:
        return Assignment([], [], list(range(len(preds))), 0.0)
    return hungarian(cost_matrix(preds, gts, weights))


def set_loss(preds: PredictionSet, gts: InstanceSet, assignment: Assignment,
             weights: SetLossWeights = SetLossWeights(),
             no_object_weight: float = 0.1) -> SetLoss:
    """Set loss over matched pairs plus "no object" supervision.

    Box terms are means over matched pairs. The class term is a weighted
    cross-entropy over all queries: matched queries target their instance's
    class with weight 1, the rest target "no object" with
    ``no_object_weight``; it is normalized by the total weight.
    """
    nq = len(preds)
    no_obj = preds.num_classes
    target = np.full(nq, no_obj, dtype=np.int64)
    w = np.full(nq, float(no_object_weight))
    giou = center = size = 0.0
    if assignment.pairs:
        rows = np.array([r for r, _ in assignment.pairs])
        cols = np.array([c for _, c in assignment.pairs])
        if cols.max() >= nq or rows.max() >= len(gts):
            raise ValueError("assignment does not fit the given predictions/instances")
        target[cols] = gts.class_ids[rows]
        w[cols] = 1.0
        g, p = gts.boxes[rows], preds.boxes[cols]
        giou = float(np.mean(1.0 - np.diag(pairwise_giou(g, p))))
        center = float(np.mean(np.abs(g[:, :3] - p[:, :3]).sum(1)))
        size = float(np.mean(np.abs(g[:, 3:] - p[:, 3:]).sum(1)))
    cls = 0.0
    if nq and w.sum() > 0:
        picked = np.maximum(preds.class_probs[np.arange(nq), target], PROB_EPS)
        cls = float(np.sum(w * -np.log(picked)) / w.sum())
    total = (weights.giou * giou + weights.cls * cls
             + weights.center * center + weights.size * size)
    return SetLoss(giou, cls, center, size, float(total))


def sample_captions(instances: InstanceSet, rng: np.random.Generator) -> list[str]:
    """Pick one annotation uniformly at random from each instance's corpus."""
    out = []
    for j, corpus in enumerate(instances.corpora):
        if not corpus:
            raise ValueError(f"instance {instances.ids[j]} has no caption")
        out.append(corpus[int(rng.integers(len(corpus)))])
    return out


def assign_captions(sentences: Sequence[str], assignment: Assignment,
                    n_queries: int) -> list[Optional[str]]:
    """Caption target per query: its matched instance's sentence, else None."""
    targets: list[Optional[str]] = [None] * n_queries
    for r, c in assignment.pairs:
        if r >= len(sentences) or sentences[r] is None:
            raise ValueError(f"instance {r} has no sampled sentence")
        targets[c] = sentences[r]
    return targets


def total_loss(l_vote: float, l_set_per_layer: Sequence[float], l_cap: float,
               weights: TotalLossWeights = TotalLossWeights()) -> float:
    if len(l_set_per_layer) != weights.n_dec_layer:
        raise ValueError(f"expected {weights.n_dec_layer} per-layer set losses, "
                         f"got {len(l_set_per_layer)}")
    return float(weights.vote * l_vote + weights.set * math.fsum(l_set_per_layer)
                 + weights.caption * l_cap)


class SetCriterion(BaseEstimator):
    """Matcher + set loss with sklearn-style parameters.

    >>> crit = SetCriterion(giou_weight=10.0)
    >>> crit.get_params()["center_weight"]
    5.0
    """

    def __init__(self, giou_weight=10.0, cls_weight=1.0, center_weight=5.0,
                 size_weight=1.0, no_object_weight=0.1):
        self.giou_weight = giou_weight
        self.cls_weight = cls_weight
        self.center_weight = center_weight
        self.size_weight = size_weight
        self.no_object_weight = no_object_weight

    @property
    def weights(self) -> SetLossWeights:
        return SetLossWeights(self.giou_weight, self.cls_weight,
                              self.center_weight, self.size_weight)

    def match(self, preds: PredictionSet, gts: InstanceSet) -> Assignment:
        return match_scene(preds, gts, self.weights)

    def loss(self, preds: PredictionSet, gts: InstanceSet) -> SetLoss:
        return set_loss(preds, gts, self.match(preds, gts), self.weights,
                        self.no_object_weight)
