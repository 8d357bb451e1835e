"""Annotation ingestion, synthetic pose generation and seeded splitting.

Annotation files are JSON lines, one person per line::

    {"id": "015601864_1", "joints": [[x, y], ... 16 pairs ...], "image_size": [w, h]}

Joints use the MPII order (see ``pose.JOINT_NAMES``). ``image_size`` is
optional. A record missing a joint, with a ``null`` or non-finite
coordinate, or with a repeated id is skipped and counted as rejected.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pose import DEFAULT_ROOT_INDEX, N_JOINTS, PoseDataset

log = logging.getLogger(__name__)


class AnnotationParseError(ValueError):
    def __init__(self, path, line_no, msg):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


class EmptyDatasetError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass
class LoadReport:
    accepted: int = 0
    rejected: int = 0
    reasons: dict | None = None


def _valid_joints(joints):
    if not isinstance(joints, list) or len(joints) != N_JOINTS:
        return None, "wrong joint count"
    out = []
    for pt in joints:
        if not isinstance(pt, (list, tuple)) or len(pt) != 2:
            return None, "malformed joint"
        x, y = pt
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (x, y)):
            return None, "missing coordinate"
        if not (math.isfinite(x) and math.isfinite(y)):
            return None, "non-finite coordinate"
        out.append((float(x), float(y)))
    return out, None


def read_annotations(path, root_index: int = DEFAULT_ROOT_INDEX) -> tuple[PoseDataset, LoadReport]:
    """Parse a JSON-lines annotation file; returns the valid poses and a count report."""
    path = Path(path)
    ids, joints, splits = [], [], []
    seen = set()
    report = LoadReport(reasons={})

    def reject(reason):
        report.rejected += 1
        report.reasons[reason] = report.reasons.get(reason, 0) + 1

    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationParseError(path, line_no, exc.msg) from None
            if not isinstance(rec, dict) or "id" not in rec:
                raise AnnotationParseError(path, line_no, "record must be an object with an 'id'")
            pts, why = _valid_joints(rec.get("joints"))
            if pts is None:
                reject(why)
                continue
            if rec["id"] in seen:
                reject("duplicate id")
                continue
            seen.add(rec["id"])
            ids.append(rec["id"])
            joints.append(pts)
            splits.append(rec.get("split"))

    report.accepted = len(ids)
    log.info("%s: accepted %d, rejected %d", path, report.accepted, report.rejected)
    if not ids:
        raise EmptyDatasetError(f"{path}: no valid records")
    tags = splits if all(s is not None for s in splits) else None
    return PoseDataset(ids, np.array(joints), tags, root_index), report


def load_annotations(path, root_index: int = DEFAULT_ROOT_INDEX) -> PoseDataset:
    return read_annotations(path, root_index)[0]


def write_annotations(dataset: PoseDataset, path) -> None:
    with open(Path(path), "w") as fh:
        for i, pid in enumerate(dataset.ids):
            rec = {"id": pid, "joints": dataset.joints[i].tolist()}
            if dataset.splits is not None:
                rec["split"] = dataset.splits[i]
            fh.write(json.dumps(rec) + "\n")


# Kinematic tree over the MPII joints, rooted at the pelvis:
# (joint, parent, length as a fraction of body height, rest angle in degrees).
# Angles are measured in image coordinates (y down), so -90 points up.
_SKELETON = (
    (7, 6, 0.30, -90.0),   # thorax
    (8, 7, 0.08, -90.0),   # upper neck
    (9, 8, 0.12, -90.0),   # head top
    (2, 6, 0.08, 180.0),   # r hip
    (3, 6, 0.08, 0.0),     # l hip
    (1, 2, 0.24, 90.0),    # r knee
    (0, 1, 0.24, 90.0),    # r ankle
    (4, 3, 0.24, 90.0),    # l knee
    (5, 4, 0.24, 90.0),    # l ankle
    (12, 7, 0.10, 180.0),  # r shoulder
    (13, 7, 0.10, 0.0),    # l shoulder
    (11, 12, 0.16, 90.0),  # r elbow
    (10, 11, 0.14, 90.0),  # r wrist
    (14, 13, 0.16, 90.0),  # l elbow
    (15, 14, 0.14, 90.0),  # l wrist
)

# How far each bone's angle may swing from rest when drawing a prototype (degrees).
_PROTOTYPE_SWING = {7: 30, 8: 20, 9: 20, 2: 10, 3: 10, 1: 70, 0: 70, 4: 70, 5: 70,
                    12: 10, 13: 10, 11: 150, 10: 120, 14: 150, 15: 120}


@dataclass(frozen=True)
class SyntheticSpec:
    """Generative model for clustered stick-figure poses.

    Each pose picks one of ``n_prototypes`` joint-angle configurations, adds
    Gaussian angle noise (``angle_jitter`` degrees) and bone-length noise,
    then applies a global scale and a translation inside ``image_size``.
    """

    n_prototypes: int = 64
    body_height: float = 200.0
    angle_jitter: float = 12.0
    length_jitter: float = 0.02
    scale_jitter: float = 0.05
    image_size: float = 640.0
    root_index: int = DEFAULT_ROOT_INDEX


def _pose_from_angles(angles: np.ndarray, lengths: np.ndarray, height: float) -> np.ndarray:
    joints = np.zeros((N_JOINTS, 2))
    for k, (j, parent, _, _) in enumerate(_SKELETON):
        rad = np.deg2rad(angles[k])
        joints[j] = joints[parent] + height * lengths[k] * np.array([np.cos(rad), np.sin(rad)])
    return joints


def prototype_angles(n: int, rng: np.random.Generator) -> np.ndarray:
    """``(n, 15)`` absolute bone angles, each drawn within its swing around rest.

    Child bones inherit the parent's deviation so limbs bend coherently.
    """
    rest = np.array([b[3] for b in _SKELETON])
    swing = np.array([_PROTOTYPE_SWING[b[0]] for b in _SKELETON], dtype=float)
    rel = rng.uniform(-1, 1, size=(n, len(_SKELETON))) * swing
    absolute = np.empty_like(rel)
    offset_of = {6: np.zeros(n)}
    for k, (j, parent, _, _) in enumerate(_SKELETON):
        inherited = offset_of[parent]
        absolute[:, k] = rest[k] + inherited + rel[:, k]
        offset_of[j] = inherited + rel[:, k]
    return absolute


def sample_synthetic(n: int, seed: int, spec: SyntheticSpec = SyntheticSpec()):
    """Generate ``n`` poses; returns ``(dataset, prototype_labels)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    protos = prototype_angles(spec.n_prototypes, rng)
    base_lengths = np.array([b[2] for b in _SKELETON])
    labels = rng.integers(0, spec.n_prototypes, size=n)
    joints = np.empty((n, N_JOINTS, 2))
    for i in range(n):
        angles = protos[labels[i]] + rng.normal(0, spec.angle_jitter, size=len(_SKELETON))
        lengths = base_lengths * (1 + rng.normal(0, spec.length_jitter, size=len(_SKELETON)))
        height = spec.body_height * (1 + rng.uniform(-spec.scale_jitter, spec.scale_jitter))
        pose = _pose_from_angles(angles, lengths, height)
        lo, hi = pose.min(axis=0), pose.max(axis=0)
        room = np.maximum(spec.image_size - (hi - lo), 0)
        pose += -lo + rng.uniform(0, 1, size=2) * room
        joints[i] = pose
    ids = [f"syn{i:06d}" for i in range(n)]
    return PoseDataset(ids, joints, None, spec.root_index), labels


def generate_synthetic(n: int, seed: int, spec: SyntheticSpec = SyntheticSpec()) -> PoseDataset:
    return sample_synthetic(n, seed, spec)[0]


def split_dataset(dataset: PoseDataset, n_train: int, n_db: int, n_query: int, seed: int) -> PoseDataset:
    """Tag a seeded random subset as train/database/query.

    Poses left over when the sizes sum to less than the dataset are dropped.
    The result keeps the input order.
    """
    sizes = (n_train, n_db, n_query)
    if min(sizes) < 0:
        raise ValueError("split sizes must be non-negative")
    if sum(sizes) > len(dataset):
        raise InsufficientDataError(f"requested {sum(sizes)} poses from a dataset of {len(dataset)}")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    tag = {}
    for i in perm[:n_train]:
        tag[int(i)] = "train"
    for i in perm[n_train : n_train + n_db]:
        tag[int(i)] = "database"
    for i in perm[n_train + n_db : n_train + n_db + n_query]:
        tag[int(i)] = "query"
    keep = sorted(tag)
    return dataset.subset(keep).with_splits([tag[i] for i in keep])
