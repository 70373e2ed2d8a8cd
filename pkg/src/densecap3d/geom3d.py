"""Axis-aligned 3D boxes: corners, IoU, generalized IoU and greedy NMS.

Boxes are stored as ``[cx, cy, cz, sx, sy, sz]`` in meters, with ``s*`` the
full edge lengths. Rotation is not modelled.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._validation import check_boxes

EPS = 1e-12


@dataclass(frozen=True)
class Box3D:
    center: tuple[float, float, float]
    size: tuple[float, float, float]

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size must be 3-vectors")
        if not all(np.isfinite(center + size)):
            raise ValueError("box values must be finite")
        if any(s <= 0 for s in size):
            raise ValueError(f"box size must be strictly positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Box3D":
        values = [float(v) for v in values]
        if len(values) != 6:
            raise ValueError("box array must be [cx, cy, cz, sx, sy, sz]")
        return cls(tuple(values[:3]), tuple(values[3:]))

    def to_array(self) -> np.ndarray:
        return np.array(self.center + self.size, dtype=np.float64)

    def to_list(self) -> list[float]:
        return list(self.center + self.size)

    @property
    def min_corner(self) -> np.ndarray:
        return np.subtract(self.center, np.divide(self.size, 2.0))

    @property
    def max_corner(self) -> np.ndarray:
        return np.add(self.center, np.divide(self.size, 2.0))

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    def contains(self, points, atol: float = 0.0) -> np.ndarray:
        """Boolean mask of the (n, 3) ``points`` lying inside the closed box."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((pts >= self.min_corner - atol) & (pts <= self.max_corner + atol), axis=1)


def as_box_array(boxes) -> np.ndarray:
    """Accept a sequence of :class:`Box3D` or an (n, 6) array-like."""
    if isinstance(boxes, Box3D):
        return boxes.to_array()[None, :]
    boxes = list(boxes) if not isinstance(boxes, np.ndarray) else boxes
    if len(boxes) and isinstance(boxes[0], Box3D):
        return np.stack([b.to_array() for b in boxes])
    return check_boxes(boxes)


def corners(box: Box3D) -> np.ndarray:
    """Return the 8 corners as an (8, 3) array.

    Order is z-major, then y, then x: corner ``4*iz + 2*iy + ix`` takes the
    min (0) or max (1) coordinate on each axis.
    """
    lo, hi = box.min_corner, box.max_corner
    out = np.empty((8, 3))
    for iz in range(2):
        for iy in range(2):
            for ix in range(2):
                out[4 * iz + 2 * iy + ix] = (
                    (lo, hi)[ix][0], (lo, hi)[iy][1], (lo, hi)[iz][2])
    return out


def _bounds(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    half = arr[..., 3:] / 2.0
    return arr[..., :3] - half, arr[..., :3] + half


def _overlap_terms(a: np.ndarray, b: np.ndarray):
    """Pairwise intersection, union and enclosing volumes for (n,6) x (m,6)."""
    a_lo, a_hi = _bounds(a[:, None, :])
    b_lo, b_hi = _bounds(b[None, :, :])
    extent = np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo)
    extent = np.where(extent > EPS, extent, 0.0)
    inter = np.prod(extent, axis=-1)
    vol_a = np.prod(a[:, 3:], axis=-1)[:, None]
    vol_b = np.prod(b[:, 3:], axis=-1)[None, :]
    union = vol_a + vol_b - inter
    hull = np.prod(np.maximum(a_hi, b_hi) - np.minimum(a_lo, b_lo), axis=-1)
    return inter, union, hull


def pairwise_iou(a, b) -> np.ndarray:
    """IoU matrix between two box collections, shape (len(a), len(b))."""
    a, b = as_box_array(a), as_box_array(b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    inter, union, _ = _overlap_terms(a, b)
    return np.clip(inter / union, 0.0, 1.0)


def pairwise_giou(a, b) -> np.ndarray:
    a, b = as_box_array(a), as_box_array(b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    inter, union, hull = _overlap_terms(a, b)
    return inter / union - (hull - union) / hull


def iou3d(a: Box3D, b: Box3D) -> float:
    return float(pairwise_iou([a], [b])[0, 0])


def giou3d(a: Box3D, b: Box3D) -> float:
    """Generalized IoU using the axis-aligned enclosing box; lies in (-1, 1]."""
    return float(pairwise_giou([a], [b])[0, 0])


def nms(boxes, scores, iou_threshold: float) -> list[int]:
    """Greedy non-maximum suppression.

    A box is dropped when its IoU with an already kept box is strictly
    greater than ``iou_threshold``. Kept indices come back in descending
    score order; equal scores keep the lower index first.
    """
    arr = as_box_array(boxes)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(arr) != len(scores):
        raise ValueError(f"got {len(arr)} boxes but {len(scores)} scores")
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    if len(arr) == 0:
        return []
    # lexsort: last key is primary -> descending score, then ascending index
    order = np.lexsort((np.arange(len(scores)), -scores))
    iou = pairwise_iou(arr, arr)
    suppressed = np.zeros(len(arr), dtype=bool)
    keep = []
    for idx in order:
        if suppressed[idx]:
            continue
        keep.append(int(idx))
        suppressed |= iou[idx] > iou_threshold
    return keep
