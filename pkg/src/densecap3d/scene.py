"""Ground-truth and prediction containers shared across modules."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._validation import check_boxes, check_probs
from .geom3d import Box3D
from .pointset import PointCloud


@dataclass
class InstanceSet:
    """Annotated instances of one scene.

    ``ids`` are the labels used in ``PointCloud.instance_ids``; ``corpora``
    holds every caption annotation of each instance. ``centers`` defaults
    to the box centers.
    """

    ids: Sequence[int]
    boxes: np.ndarray
    class_ids: Sequence[int]
    corpora: list[list[str]]
    centers: Optional[np.ndarray] = None

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        self.boxes = check_boxes(self.boxes, name="instance boxes")
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64).reshape(-1)
        self.corpora = [list(c) for c in self.corpora]
        k = len(self.ids)
        if not (len(self.boxes) == len(self.class_ids) == len(self.corpora) == k):
            raise ValueError("ids, boxes, class_ids and corpora must have equal length")
        if len(set(self.ids)) != k:
            raise ValueError("instance ids must be unique")
        if self.centers is None:
            self.centers = self.boxes[:, :3].copy()
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(k, 3)
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("instance centers must be finite")

    def __len__(self):
        return len(self.ids)

    @classmethod
    def empty(cls) -> "InstanceSet":
        return cls([], np.zeros((0, 6)), [], [])

    def index_of(self, instance_id: int) -> int:
        try:
            return self.ids.index(int(instance_id))
        except ValueError:
            raise KeyError(f"instance id {instance_id} not in instance set") from None

    def box(self, j: int) -> Box3D:
        return Box3D.from_array(self.boxes[j])

    def permuted(self, order) -> "InstanceSet":
        order = list(order)
        return InstanceSet([self.ids[i] for i in order], self.boxes[order],
                           self.class_ids[order], [self.corpora[i] for i in order],
                           self.centers[order])


@dataclass
class Scene:
    scene_id: str
    cloud: PointCloud
    instances: InstanceSet
    class_names: list[str] = field(default_factory=list)


@dataclass
class PredictionSet:
    """Per-query boxes, class distributions and captions for one scene.

    ``class_probs`` has C + 1 columns; the last is the "no object" class.
    """

    boxes: np.ndarray
    class_probs: np.ndarray
    captions: list[str]

    def __post_init__(self):
        self.boxes = check_boxes(self.boxes, name="prediction boxes")
        self.class_probs = check_probs(self.class_probs)
        self.captions = list(self.captions)
        if not (len(self.boxes) == len(self.class_probs) == len(self.captions)):
            raise ValueError("boxes, class_probs and captions must have equal length")

    def __len__(self):
        return len(self.boxes)

    @property
    def num_classes(self) -> int:
        return self.class_probs.shape[1] - 1

    @property
    def scores(self) -> np.ndarray:
        """Objectness confidence, ``1 - P(no object)``."""
        if len(self) == 0:
            return np.zeros(0)
        return 1.0 - self.class_probs[:, -1]

    @property
    def labels(self) -> np.ndarray:
        """Most likely semantic class per query (the no-object slot excluded)."""
        if len(self) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.argmax(self.class_probs[:, :-1], axis=1)

    def subset(self, indices) -> "PredictionSet":
        indices = list(indices)
        if not indices:
            return PredictionSet(np.zeros((0, 6)), np.zeros((0, self.class_probs.shape[1])), [])
        return PredictionSet(self.boxes[indices], self.class_probs[indices],
                             [self.captions[i] for i in indices])

    @classmethod
    def empty(cls, num_classes: int) -> "PredictionSet":
        return cls(np.zeros((0, 6)), np.zeros((0, num_classes + 1)), [])
