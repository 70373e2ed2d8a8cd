"""Synthetic scenes, annotations and perturbed predictions for testing.

Randomness comes from :class:`SplitMix64`, a counter-based 64-bit
generator whose outputs are fixed by its constants, so fixtures are
reproducible on any platform and in any language:

    x_i   = seed + i * 0x9E3779B97F4A7C15          (mod 2**64, i = 1, 2, ...)
    z     = (x_i ^ (x_i >> 30)) * 0xBF58476D1CE4E5B9
    z     = (z   ^ (z   >> 27)) * 0x94D049BB133111EB
    out_i = z ^ (z >> 31)

Floats in [0, 1) are ``(out >> 11) * 2**-53``; integers in [0, n) are
``(out * n) >> 64``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .pointset import PointCloud
from .scene import InstanceSet, PredictionSet, Scene
from .textmetrics import tokenize

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
FORK = 0xD1B54A32D192ED03

SCANNET_CLASSES = (
    "cabinet", "bed", "chair", "sofa", "table", "door", "window", "bookshelf",
    "picture", "counter", "desk", "curtain", "refrigerator", "shower curtain",
    "toilet", "sink", "bathtub", "others",
)

ATTRIBUTES = ("brown", "white", "black", "wooden", "small", "large", "gray", "blue")

CAPTION_TEMPLATES = (
    "the {attr} {cls} is near the {other}",
    "this is a {attr} {cls} next to the {other}",
    "there is a {attr} {cls} by the {other}",
    "a {attr} {cls} placed close to the {other}",
)


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        return mix64((self.seed + self.counter * GOLDEN) & MASK64)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def integers(self, n: int) -> int:
        if n < 1:
            raise ValueError("n must be >= 1")
        return (self.next_u64() * n) >> 64

    def fork(self, key: int) -> "SplitMix64":
        """Independent child stream; does not advance this one."""
        return SplitMix64(mix64(self.seed ^ ((int(key) * FORK) & MASK64)))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    room_extent: tuple[float, float, float] = (8.0, 8.0, 3.0)
    instance_count: tuple[int, int] = (2, 8)
    classes: tuple[str, ...] = SCANNET_CLASSES
    points_per_instance: int = 128
    floor_points: int = 256
    captions_per_instance: int = 1
    size_range: tuple[float, float] = (0.4, 2.0)
    max_retries: int = 200

    def __post_init__(self):
        if min(self.room_extent) <= 0:
            raise ValueError("room extents must be positive")
        lo, hi = self.instance_count
        if lo < 0 or hi < lo:
            raise ValueError("instance_count must be a range (lo, hi) with 0 <= lo <= hi")
        if not 1 <= self.captions_per_instance <= len(CAPTION_TEMPLATES):
            raise ValueError(f"captions_per_instance must lie in [1, {len(CAPTION_TEMPLATES)}]")
        if self.points_per_instance < 0 or self.floor_points < 0:
            raise ValueError("point counts must be nonnegative")


def _sample_surface(rng: SplitMix64, box: np.ndarray, n: int) -> np.ndarray:
    lo, hi = box[:3] - box[3:] / 2.0, box[:3] + box[3:] / 2.0
    sx, sy, sz = box[3:]
    areas = np.array([sy * sz, sx * sz, sx * sy])
    cum = np.cumsum(areas) / areas.sum()
    pts = np.empty((n, 3))
    for i in range(n):
        axis = min(int(np.searchsorted(cum, rng.random(), side="right")), 2)
        p = np.array([rng.uniform(lo[a], hi[a]) for a in range(3)])
        p[axis] = hi[axis] if rng.integers(2) else lo[axis]
        pts[i] = p
    return pts


def _disjoint(box: np.ndarray, others: Sequence[np.ndarray], margin: float) -> bool:
    for o in others:
        gap = np.abs(box[:3] - o[:3]) - (box[3:] + o[3:]) / 2.0
        if np.all(gap < margin):
            return False
    return True


def _caption(template: str, attr: str, cls: str, other: str) -> str:
    return template.format(attr=attr, cls=cls, other=other)


def gen_scene(spec: SceneSpec, index: int = 0) -> Scene:
    """Generate scene ``index`` of the stream defined by ``spec.seed``.

    Boxes sit slightly above the floor (z = 0) so floor points never fall
    inside an instance.
    """
    rng = SplitMix64(spec.seed).fork(index)
    ex, ey, ez = spec.room_extent
    lo, hi = spec.instance_count
    wanted = lo + rng.integers(hi - lo + 1)
    smin, smax = spec.size_range
    boxes: list[np.ndarray] = []
    for _ in range(wanted):
        for _attempt in range(spec.max_retries):
            size = np.array([rng.uniform(smin, min(smax, ex)), rng.uniform(smin, min(smax, ey)),
                             rng.uniform(smin, min(smax, ez * 0.8))])
            lift = rng.uniform(0.02, 0.2)
            center = np.array([rng.uniform(size[0] / 2, ex - size[0] / 2),
                               rng.uniform(size[1] / 2, ey - size[1] / 2),
                               lift + size[2] / 2])
            box = np.concatenate([center, size])
            if _disjoint(box, boxes, margin=0.05):
                boxes.append(box)
                break
        else:
            log.warning("scene %d: placed %d of %d instances", index, len(boxes), wanted)
            break

    class_ids = [rng.integers(len(spec.classes)) for _ in boxes]
    attrs = [ATTRIBUTES[rng.integers(len(ATTRIBUTES))] for _ in boxes]
    corpora = []
    for j, box in enumerate(boxes):
        if len(boxes) > 1:
            dist = [np.linalg.norm(box[:3] - b[:3]) if i != j else np.inf
                    for i, b in enumerate(boxes)]
            other = spec.classes[class_ids[int(np.argmin(dist))]]
        else:
            other = "wall"
        corpora.append([_caption(t, attrs[j], spec.classes[class_ids[j]], other)
                        for t in CAPTION_TEMPLATES[:spec.captions_per_instance]])

    pos, ids = [], []
    for j, box in enumerate(boxes):
        pos.append(_sample_surface(rng, box, spec.points_per_instance))
        ids += [j] * spec.points_per_instance
    floor = np.array([[rng.uniform(0, ex), rng.uniform(0, ey), 0.0]
                      for _ in range(spec.floor_points)]).reshape(-1, 3)
    pos.append(floor)
    ids += [-1] * spec.floor_points
    positions = np.concatenate(pos) if pos else np.zeros((0, 3))
    cloud = PointCloud(positions, positions[:, 2:3].copy(), np.array(ids, dtype=np.int64))
    instances = InstanceSet(list(range(len(boxes))),
                            np.array(boxes).reshape(-1, 6), class_ids, corpora)
    return Scene(f"scene{index:04d}", cloud, instances, list(spec.classes))


def oracle_offset_predictor(scene: Scene):
    """Predictor sending each instance point exactly to its instance center.

    Points are recognised by position; unknown positions fall back to box
    containment. Background points get a zero offset.
    """
    lookup = {}
    ids = scene.cloud.instance_ids
    for p, iid in zip(scene.cloud.positions, ids if ids is not None else []):
        if iid >= 0:
            lookup[tuple(p)] = scene.instances.centers[scene.instances.index_of(iid)]
    boxes = [scene.instances.box(j) for j in range(len(scene.instances))]

    def predict(position, feature=None):
        p = np.asarray(position, dtype=np.float64)
        center = lookup.get(tuple(p))
        if center is None:
            for j, b in enumerate(boxes):
                if b.contains(p)[0]:
                    center = scene.instances.centers[j]
                    break
        return np.zeros(3) if center is None else center - p

    return predict


def perturbed_predictions(scene: Scene, box_noise: float = 0.0, class_error_rate: float = 0.0,
                          duplicate_count: int = 1, caption_corruption_rate: float = 0.0,
                          seed: int = 0, flip_pool: Optional[Sequence[int]] = None,
                          pad_to: Optional[int] = None) -> PredictionSet:
    """Noisy copies of the ground truth.

    Every instance yields ``duplicate_count`` proposals whose centers and
    sizes are jittered by ``U(-box_noise, box_noise)`` per axis. The class
    flips to another member of ``flip_pool`` with ``class_error_rate``;
    caption tokens are dropped independently with ``caption_corruption_rate``.
    Confidence (``1 - P(no object)``) is drawn from U(0.5, 1). ``pad_to``
    appends random low-confidence boxes until that many proposals exist.
    """
    for name, rate in (("class_error_rate", class_error_rate),
                       ("caption_corruption_rate", caption_corruption_rate)):
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    if duplicate_count < 0 or box_noise < 0:
        raise ValueError("duplicate_count and box_noise must be nonnegative")
    rng = SplitMix64(seed).fork(hash_scene_id(scene.scene_id))
    n_cls = len(scene.class_names)
    pool = list(range(n_cls)) if flip_pool is None else sorted(set(flip_pool))
    inst = scene.instances
    boxes, probs, captions = [], [], []
    for j in range(len(inst)):
        gt_box = inst.boxes[j]
        base_tokens = tokenize(inst.corpora[j][0])
        for _ in range(duplicate_count):
            jitter = np.array([rng.uniform(-box_noise, box_noise) for _ in range(6)])
            box = gt_box + jitter
            box[3:] = np.maximum(box[3:], 0.01)
            cls = int(inst.class_ids[j])
            if rng.random() < class_error_rate:
                choices = [c for c in pool if c != cls]
                if choices:
                    cls = choices[rng.integers(len(choices))]
            conf = rng.uniform(0.5, 1.0)
            p = np.zeros(n_cls + 1)
            p[cls], p[-1] = conf, 1.0 - conf
            kept = [t for t in base_tokens if rng.random() >= caption_corruption_rate]
            boxes.append(box)
            probs.append(p)
            captions.append(" ".join(kept or base_tokens[:1]))
    extent = np.ones(3)
    if len(inst):
        extent = np.maximum(extent, (inst.boxes[:, :3] + inst.boxes[:, 3:] / 2).max(axis=0))
    while pad_to is not None and len(boxes) < pad_to:
        size = np.array([rng.uniform(0.2, 1.5) for _ in range(3)])
        center = np.array([rng.uniform(0, e) for e in extent])
        cls = pool[rng.integers(len(pool))]
        conf = rng.uniform(0.05, 0.5)
        p = np.zeros(n_cls + 1)
        p[cls], p[-1] = conf, 1.0 - conf
        boxes.append(np.concatenate([center, size]))
        probs.append(p)
        template = CAPTION_TEMPLATES[rng.integers(len(CAPTION_TEMPLATES))]
        attr = ATTRIBUTES[rng.integers(len(ATTRIBUTES))]
        other = scene.class_names[pool[rng.integers(len(pool))]]
        captions.append(_caption(template, attr, scene.class_names[cls], other))
    if not boxes:
        return PredictionSet.empty(n_cls)
    return PredictionSet(np.array(boxes), np.array(probs), captions)


def hash_scene_id(scene_id: str) -> int:
    """Stable 64-bit key for a scene id (FNV-1a over its UTF-8 bytes)."""
    h = 0xCBF29CE484222325
    for b in scene_id.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def gen_dataset(spec: SceneSpec, n_scenes: int) -> list[Scene]:
    return [gen_scene(spec, i) for i in range(n_scenes)]
