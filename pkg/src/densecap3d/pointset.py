"""Point clouds, farthest point sampling, ball-query grouping and encodings."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_points

Aggregator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class PointCloud:
    """Positions (n, 3), features (n, f) and optional per-point instance ids.

    An instance id of -1 marks background.
    """

    positions: np.ndarray
    features: np.ndarray = None
    instance_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        if self.features is None:
            self.features = np.zeros((n, 0))
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features.reshape(n, -1)
        if len(self.features) != n:
            raise ValueError(f"features has {len(self.features)} rows, positions has {n}")
        if self.instance_ids is not None:
            self.instance_ids = np.asarray(self.instance_ids, dtype=np.int64).reshape(-1)
            if len(self.instance_ids) != n:
                raise ValueError("instance_ids length must match the number of points")

    def __len__(self):
        return len(self.positions)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class FourierPEConfig:
    num_bands: int = 32
    max_frequency: float = 64.0

    def __post_init__(self):
        if self.num_bands < 1:
            raise ValueError("num_bands must be positive")
        if self.max_frequency < 1.0:
            raise ValueError("max_frequency must be >= 1")

    @property
    def output_dim(self) -> int:
        return 6 * self.num_bands

    @property
    def frequencies(self) -> np.ndarray:
        return np.geomspace(1.0, self.max_frequency, self.num_bands)


@dataclass
class BallQueryResult:
    groups: list[np.ndarray]
    fallback: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def fps(points, k: int, start_index: int = 0) -> list[int]:
    """Farthest point sampling.

    Each pick maximizes the minimum Euclidean distance to the points picked
    so far; ties go to the lower index. Returns indices in pick order.
    """
    pts = check_points(points)
    n = len(pts)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if not 0 <= start_index < n:
        raise ValueError(f"start_index {start_index} out of range for {n} points")
    picked = [int(start_index)]
    min_dist = np.linalg.norm(pts - pts[start_index], axis=1)
    min_dist[start_index] = -1.0
    for _ in range(k - 1):
        # argmax returns the first maximum -> lowest index on ties
        nxt = int(np.argmax(min_dist))
        picked.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(pts - pts[nxt], axis=1))
        min_dist[picked] = -1.0
    return picked


def ball_query(centers, cloud: PointCloud, radius: float, max_samples: int) -> BallQueryResult:
    """Group up to ``max_samples`` lowest-index points within ``radius`` of each center.

    A center with no neighbour in range gets its nearest point instead and
    is flagged in ``fallback``.
    """
    if len(cloud) == 0:
        raise ValueError("cannot query an empty point cloud")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if max_samples < 1:
        raise ValueError("max_samples must be >= 1")
    ctr = check_points(centers, name="centers", min_points=0)
    groups, fallback = [], np.zeros(len(ctr), dtype=bool)
    for i, c in enumerate(ctr):
        dist = np.linalg.norm(cloud.positions - c, axis=1)
        inside = np.flatnonzero(dist <= radius)
        if inside.size == 0:
            groups.append(np.array([int(np.argmin(dist))]))
            fallback[i] = True
        else:
            groups.append(inside[:max_samples])
    return BallQueryResult(groups, fallback)


def max_pool_aggregator(rel_positions: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Channel-wise maximum over ``relative position (+) feature`` rows."""
    return np.concatenate([rel_positions, features], axis=1).max(axis=0)


def set_abstraction(centers, cloud: PointCloud, radius: float, max_samples: int,
                    aggregator: Aggregator = max_pool_aggregator) -> np.ndarray:
    """Aggregate each center's ball-query group into one feature vector.

    Group positions are passed to ``aggregator`` relative to their center.
    """
    ctr = check_points(centers, name="centers", min_points=0)
    grouped = ball_query(ctr, cloud, radius, max_samples)
    out = []
    for c, idx in zip(ctr, grouped.groups):
        vec = np.asarray(aggregator(cloud.positions[idx] - c, cloud.features[idx]),
                         dtype=np.float64).reshape(-1)
        if out and vec.shape != out[0].shape:
            raise ValueError(
                f"aggregator returned dimension {vec.shape[0]}, expected {out[0].shape[0]}")
        out.append(vec)
    if not out:
        return np.zeros((0, 3 + cloud.num_features))
    return np.stack(out)


def fourier_pe(position, config: FourierPEConfig = FourierPEConfig()) -> np.ndarray:
    """Sinusoidal encoding of a 3D position.

    Layout per axis (x, y, z in turn): ``sin(2*pi*f_b*v)`` for every band,
    then ``cos(2*pi*f_b*v)`` for every band. Frequencies are geometrically
    spaced from 1 to ``config.max_frequency``.
    """
    pos = np.asarray(position, dtype=np.float64).reshape(3)
    phase = 2.0 * np.pi * pos[:, None] * config.frequencies[None, :]
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1).reshape(-1)


def nearest_tokens(queries, tokens, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest token positions per query, nearest first.

    This is the local-context selection used by the caption head; distance
    ties go to the lower token index.
    """
    q = check_points(queries, name="queries", min_points=0)
    t = check_points(tokens, name="tokens")
    if not 1 <= k <= len(t):
        raise ValueError(f"k must lie in [1, {len(t)}]")
    dist = np.linalg.norm(q[:, None, :] - t[None, :, :], axis=-1)
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


class FarthestPointSampler(TransformerMixin, BaseEstimator):
    """Select ``n_samples`` points by FPS; ``transform`` returns the subset.

    ``sample_indices_`` holds the pick order from the last ``fit``.
    """

    def __init__(self, n_samples=256, start_index=0):
        self.n_samples = n_samples
        self.start_index = start_index

    def fit(self, X, y=None):
        self.sample_indices_ = np.asarray(fps(X, self.n_samples, self.start_index))
        return self

    def transform(self, X):
        X = check_points(X)
        return X[fps(X, self.n_samples, self.start_index)]


# --- serialization ---------------------------------------------------------
#
# Binary layout (little endian):
#   int32 N, int32 F, int32 has_ids
#   N rows of (3 + F) float32
#   if has_ids: N int32 instance ids

_HEADER = struct.Struct("<iii")


def save_binary(cloud: PointCloud, path) -> None:
    n, f = len(cloud), cloud.num_features
    rows = np.concatenate([cloud.positions, cloud.features], axis=1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(n, f, int(cloud.instance_ids is not None)))
        fh.write(rows.tobytes())
        if cloud.instance_ids is not None:
            fh.write(cloud.instance_ids.astype("<i4").tobytes())


def load_binary(path) -> PointCloud:
    raw = Path(path).read_bytes()
    n, f, has_ids = _HEADER.unpack_from(raw, 0)
    off = _HEADER.size
    rows = np.frombuffer(raw, dtype="<f4", count=n * (3 + f), offset=off).reshape(n, 3 + f)
    off += rows.nbytes
    ids = None
    if has_ids:
        ids = np.frombuffer(raw, dtype="<i4", count=n, offset=off).astype(np.int64)
    rows = rows.astype(np.float64)
    return PointCloud(rows[:, :3], rows[:, 3:], ids)


def save_jsonl(cloud: PointCloud, path) -> None:
    """One JSON object per point: ``{"p": [x,y,z], "f": [...], "id": k}``."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(cloud)):
            rec = {"p": cloud.positions[i].tolist(), "f": cloud.features[i].tolist()}
            if cloud.instance_ids is not None:
                rec["id"] = int(cloud.instance_ids[i])
            fh.write(json.dumps(rec) + "\n")


def load_jsonl(path) -> PointCloud:
    pos, feats, ids = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            pos.append(rec["p"])
            feats.append(rec.get("f", []))
            if "id" in rec:
                ids.append(rec["id"])
    if ids and len(ids) != len(pos):
        raise ValueError("instance ids must be given for all points or none")
    return PointCloud(np.asarray(pos, dtype=np.float64).reshape(-1, 3),
                      np.asarray(feats, dtype=np.float64).reshape(len(pos), -1),
                      np.asarray(ids) if ids else None)
