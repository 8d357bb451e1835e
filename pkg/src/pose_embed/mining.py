"""Triplet mining from joint annotations.

For every training anchor:

* positives: the ``pos_closest_count`` nearest other training poses, whatever
  their distance, plus every other pose strictly closer than ``pos_threshold``;
* negatives: up to ``neg_cap`` of the nearest poses strictly farther than
  ``neg_threshold``, never including a positive.

Ties in distance are broken by ascending pose id. Triplets are emitted
anchor by anchor (ascending id), positives outer, negatives inner, each
list in ascending (distance, id) order. The product is never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .pose import Pose, PoseDataset


@dataclass(frozen=True)
class TripletSpec:
    pos_threshold: float = 7.0
    pos_closest_count: int = 2
    neg_threshold: float = 15.0
    neg_cap: int = 5000

    def __post_init__(self):
        if not 0 < self.pos_threshold < self.neg_threshold:
            raise ValueError("need 0 < pos_threshold < neg_threshold")
        if self.pos_closest_count < 0:
            raise ValueError("pos_closest_count must be >= 0")
        if self.neg_cap < 1:
            raise ValueError("neg_cap must be >= 1")


class Triplet(NamedTuple):
    anchor_id: object
    positive_id: object
    negative_id: object


@dataclass(frozen=True)
class AugmentationSpec:
    """Image-space jitter: scale about the canvas center, then translate.

    ``translation_range`` is a fraction of the canvas side.
    """

    scale_range: tuple[float, float] = (0.9, 1.1)
    translation_range: float = 0.10
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError("scale_range bounds must be positive and ordered")
        if not 0 <= self.translation_range < 1:
            raise ValueError("translation_range must lie in [0, 1)")


class InsufficientTrainingPoses(ValueError):
    pass


def _train_part(dataset: PoseDataset) -> PoseDataset:
    return dataset if dataset.splits is None else dataset.split("train")


def _anchor_sets(train: PoseDataset, i: int, spec: TripletSpec) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays (into ``train``) of the positives and negatives of anchor ``i``."""
    n = len(train)
    if n < spec.pos_closest_count + 1:
        raise InsufficientTrainingPoses(
            f"train split has {n} poses; need at least {spec.pos_closest_count + 1}"
        )
    d = train.distances_from(i)
    rank = train.id_rank
    others = np.ones(n, dtype=bool)
    others[i] = False

    order = np.lexsort((rank, d))
    order = order[others[order]]
    is_pos = np.zeros(n, dtype=bool)
    is_pos[order[: spec.pos_closest_count]] = True
    is_pos |= others & (d < spec.pos_threshold)
    positives = order[is_pos[order]]

    neg_mask = others & (d > spec.neg_threshold) & ~is_pos
    negatives = order[neg_mask[order]][: spec.neg_cap]
    return positives, negatives


def positive_set(anchor_id, dataset: PoseDataset, spec: TripletSpec) -> set:
    train = _train_part(dataset)
    pos, _ = _anchor_sets(train, train.index_of(anchor_id), spec)
    return {train.ids[j] for j in pos}


def negative_set(anchor_id, dataset: PoseDataset, spec: TripletSpec) -> list:
    """Negative ids in ascending (distance, id) order."""
    train = _train_part(dataset)
    _, neg = _anchor_sets(train, train.index_of(anchor_id), spec)
    return [train.ids[j] for j in neg]


class TripletStream:
    """Lazy, re-iterable stream of mined triplets over the training split.

    Iterating yields :class:`Triplet` records. :meth:`count` gives the total
    without enumerating the product. Per-anchor sets are cached once built
    (``cache=False`` recomputes them on every pass, for very large splits).
    """

    def __init__(self, dataset: PoseDataset, spec: TripletSpec = TripletSpec(), cache: bool = True):
        self.train = _train_part(dataset)
        if len(self.train) == 0:
            raise InsufficientTrainingPoses("train split is empty")
        self.spec = spec
        self.anchor_order = np.argsort(self.train.id_rank, kind="stable")
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] | None = {} if cache else None

    def sets(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Positive and negative index arrays for anchor index ``i``."""
        if self._cache is None:
            return _anchor_sets(self.train, i, self.spec)
        if i not in self._cache:
            self._cache[i] = _anchor_sets(self.train, i, self.spec)
        return self._cache[i]

    def iter_blocks(self) -> Iterator[np.ndarray]:
        """One ``(|P| * |N|, 3)`` index array per anchor with a non-empty product, in stream order."""
        for a in self.anchor_order:
            pos, neg = self.sets(int(a))
            if len(pos) and len(neg):
                block = np.empty((len(pos) * len(neg), 3), dtype=np.int64)
                block[:, 0] = a
                block[:, 1] = np.repeat(pos, len(neg))
                block[:, 2] = np.tile(neg, len(pos))
                yield block

    def iter_indices(self) -> Iterator[tuple[int, int, int]]:
        for block in self.iter_blocks():
            for a, p, n in block.tolist():
                yield a, p, n

    def __iter__(self) -> Iterator[Triplet]:
        ids = self.train.ids
        for a, p, n in self.iter_indices():
            yield Triplet(ids[a], ids[p], ids[n])

    def per_anchor_counts(self) -> np.ndarray:
        """``|P(a)| * |N(a)|`` for each anchor, in anchor (id) order."""
        out = np.empty(len(self.anchor_order), dtype=np.int64)
        for k, a in enumerate(self.anchor_order):
            pos, neg = self.sets(int(a))
            out[k] = len(pos) * len(neg)
        return out

    def count(self) -> int:
        return int(self.per_anchor_counts().sum())

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` triplets uniformly (with replacement) from the stream.

        Returns an ``(size, 3)`` array of train indices. Anchors are chosen
        with probability proportional to their triplet count, then a positive
        and a negative uniformly, which is uniform over the whole stream.
        """
        if not hasattr(self, "_weights"):
            counts = self.per_anchor_counts()
            total = counts.sum()
            if total == 0:
                raise ValueError("triplet stream is empty")
            self._weights = np.cumsum(counts) / total
        k = np.searchsorted(self._weights, rng.random(size), side="right")
        k = np.minimum(k, len(self.anchor_order) - 1)
        out = np.empty((size, 3), dtype=np.int64)
        u = rng.random((size, 2))
        for row, kk in enumerate(k):
            a = int(self.anchor_order[kk])
            pos, neg = self.sets(a)
            out[row] = a, pos[int(u[row, 0] * len(pos))], neg[int(u[row, 1] * len(neg))]
        return out


def enumerate_triplets(dataset: PoseDataset, spec: TripletSpec = TripletSpec()) -> TripletStream:
    return TripletStream(dataset, spec)


def write_triplets(triplets, path) -> int:
    """Dump triplets as ``anchor_id,positive_id,negative_id`` lines."""
    n = 0
    with open(Path(path), "w") as fh:
        for t in triplets:
            fh.write(f"{t[0]},{t[1]},{t[2]}\n")
            n += 1
    return n


def read_triplets(path) -> list[Triplet]:
    out = []
    with open(Path(path)) as fh:
        for line in fh:
            line = line.strip()
            if line:
                a, p, n = line.split(",")
                out.append(Triplet(a, p, n))
    return out


def augment_sample(
    pose: Pose,
    aug: AugmentationSpec,
    rng: np.random.Generator,
    canvas_side: float,
) -> Pose:
    """Scale joints about the canvas center, then shift them.

    Consumes exactly three uniform draws from ``rng``: scale, dx, dy.
    Joints may leave the canvas; clipping happens at render time.
    """
    lo, hi = aug.scale_range
    s = rng.uniform(lo, hi)
    shift = rng.uniform(-aug.translation_range, aug.translation_range, size=2) * canvas_side
    if lo == hi == 1.0 and aug.translation_range == 0:
        return pose
    c = canvas_side / 2.0
    return Pose(pose.id, (pose.joints - c) * s + c + shift, pose.root_index)


def augment_joints(
    joints: np.ndarray, aug: AugmentationSpec, rng: np.random.Generator, canvas_side: float
) -> np.ndarray:
    """Batched :func:`augment_sample` on an ``(n, 16, 2)`` array; same draw order per pose."""
    lo, hi = aug.scale_range
    n = len(joints)
    draws = np.empty((n, 3))
    for i in range(n):
        draws[i, 0] = rng.uniform(lo, hi)
        draws[i, 1:] = rng.uniform(-aug.translation_range, aug.translation_range, size=2)
    if lo == hi == 1.0 and aug.translation_range == 0:
        return joints.copy()
    c = canvas_side / 2.0
    return (joints - c) * draws[:, 0, None, None] + c + draws[:, None, 1:] * canvas_side
