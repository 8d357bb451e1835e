"""Pose records, datasets, and the root-aligned joint distance.

Joint coordinates follow the MPII ordering of 16 joints. Distances are in
pixels: the mean, over all 16 joints, of the Euclidean distance between
corresponding joints once both poses are translated so their root joints
coincide. The root term is always zero but still counts in the mean.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

N_JOINTS = 16

JOINT_NAMES = (
    "r_ankle",
    "r_knee",
    "r_hip",
    "l_hip",
    "l_knee",
    "l_ankle",
    "pelvis",
    "thorax",
    "upper_neck",
    "head_top",
    "r_wrist",
    "r_elbow",
    "r_shoulder",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
)

# pelvis
DEFAULT_ROOT_INDEX = 6

SPLITS = ("train", "database", "query")

# 4096 x 4096 float64 is 128 MiB
DEFAULT_MATRIX_BUDGET = 4096 * 4096


class InvalidPoseError(ValueError):
    pass


class MatrixBudgetError(MemoryError):
    """Raised when a dense distance matrix would exceed the configured budget.

    Callers should fall back to per-anchor distance rows
    (:meth:`PoseDataset.distances_from`).
    """


def _check_joints(joints) -> np.ndarray:
    arr = np.array(joints, dtype=np.float64)
    if arr.shape != (N_JOINTS, 2):
        raise InvalidPoseError(f"expected {N_JOINTS} (x, y) joints, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidPoseError("joint coordinates must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    id: object
    joints: np.ndarray
    root_index: int = DEFAULT_ROOT_INDEX

    def __post_init__(self):
        object.__setattr__(self, "joints", _check_joints(self.joints))
        if not 0 <= int(self.root_index) < N_JOINTS:
            raise InvalidPoseError(f"root_index {self.root_index} outside [0, {N_JOINTS - 1}]")
        object.__setattr__(self, "root_index", int(self.root_index))

    def translated(self, dx: float, dy: float) -> "Pose":
        return Pose(self.id, self.joints + np.array([dx, dy]), self.root_index)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (
            self.id == other.id
            and self.root_index == other.root_index
            and np.array_equal(self.joints, other.joints)
        )

    def __hash__(self):
        return hash((self.id, self.root_index, self.joints.tobytes()))


def center_pose(pose: Pose) -> np.ndarray:
    """Joint offsets from the root joint, shape (16, 2). The root row is exactly zero."""
    return pose.joints - pose.joints[pose.root_index]


def _centered(joints: np.ndarray, root_index: int) -> np.ndarray:
    return joints - joints[..., root_index : root_index + 1, :]


def _mean_joint_distance(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    """Mean per-joint Euclidean distance between centered joint arrays.

    Broadcasts over leading axes. The joint sum runs in a fixed sequential
    order so single-pair and batched calls agree to the last bit.
    """
    diff = ca - cb
    dx = diff[..., 0]
    dy = diff[..., 1]
    norms = np.sqrt(dx * dx + dy * dy)
    total = norms[..., 0].copy()
    for j in range(1, N_JOINTS):
        total += norms[..., j]
    return total / N_JOINTS


def pose_distance(a: Pose, b: Pose) -> float:
    """Mean Euclidean joint distance (pixels) after aligning root joints."""
    return float(_mean_joint_distance(center_pose(a), center_pose(b)))


@dataclass(frozen=True)
class DistanceMatrix:
    ids: tuple
    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    def row(self, pose_id) -> np.ndarray:
        return self.values[self.ids.index(pose_id)]


class PoseDataset:
    """An ordered, immutable collection of poses with split tags.

    Joints are stored as one ``(n, 16, 2)`` array. ``splits`` holds one tag
    per pose, or ``None`` for an untagged dataset.
    """

    def __init__(
        self,
        ids: Sequence,
        joints,
        splits: Sequence[str] | None = None,
        root_index: int = DEFAULT_ROOT_INDEX,
    ):
        joints = np.array(joints, dtype=np.float64)
        ids = list(ids)
        if joints.ndim != 3 or joints.shape[1:] != (N_JOINTS, 2):
            raise InvalidPoseError(f"joints must have shape (n, {N_JOINTS}, 2), got {joints.shape}")
        if len(ids) != len(joints):
            raise ValueError("ids and joints differ in length")
        if not np.all(np.isfinite(joints)):
            raise InvalidPoseError("joint coordinates must be finite")
        if len(set(ids)) != len(ids):
            raise ValueError("pose ids must be unique")
        if not 0 <= root_index < N_JOINTS:
            raise InvalidPoseError(f"root_index {root_index} outside [0, {N_JOINTS - 1}]")
        if splits is not None:
            splits = tuple(splits)
            if len(splits) != len(ids):
                raise ValueError("one split tag per pose required")
            bad = set(splits) - set(SPLITS)
            if bad:
                raise ValueError(f"unknown split tags {sorted(bad)}")

        self.ids = tuple(ids)
        self.joints = joints
        self.joints.setflags(write=False)
        self.splits = splits
        self.root_index = int(root_index)
        self._index = {pid: i for i, pid in enumerate(self.ids)}
        self._centered = _centered(self.joints, self.root_index)
        self._centered.setflags(write=False)
        # rank of each id in ascending id order, for tie-breaking
        order = sorted(range(len(self.ids)), key=lambda i: self.ids[i])
        rank = np.empty(len(self.ids), dtype=np.int64)
        rank[order] = np.arange(len(self.ids))
        self.id_rank = rank

    @classmethod
    def from_poses(cls, poses: Iterable[Pose], splits=None) -> "PoseDataset":
        poses = list(poses)
        roots = {p.root_index for p in poses}
        if len(roots) > 1:
            raise ValueError("all poses in a dataset must share root_index")
        root = roots.pop() if roots else DEFAULT_ROOT_INDEX
        joints = np.stack([p.joints for p in poses]) if poses else np.zeros((0, N_JOINTS, 2))
        return cls([p.id for p in poses], joints, splits, root)

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i: int) -> Pose:
        return Pose(self.ids[i], self.joints[i], self.root_index)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def index_of(self, pose_id) -> int:
        return self._index[pose_id]

    def pose(self, pose_id) -> Pose:
        return self[self._index[pose_id]]

    @property
    def centered(self) -> np.ndarray:
        return self._centered

    def subset(self, indices) -> "PoseDataset":
        indices = list(indices)
        splits = None if self.splits is None else [self.splits[i] for i in indices]
        return PoseDataset(
            [self.ids[i] for i in indices], self.joints[indices], splits, self.root_index
        )

    def split(self, tag: str) -> "PoseDataset":
        """Poses carrying ``tag``, in dataset order."""
        if self.splits is None:
            raise ValueError("dataset has no split tags")
        if tag not in SPLITS:
            raise ValueError(f"unknown split {tag!r}")
        return self.subset(i for i, s in enumerate(self.splits) if s == tag)

    def with_splits(self, splits) -> "PoseDataset":
        return PoseDataset(self.ids, self.joints, splits, self.root_index)

    def distances_from(self, i: int, others: "PoseDataset | None" = None) -> np.ndarray:
        """Pose distances from pose ``i`` to every pose in ``others`` (default: self)."""
        target = self if others is None else others
        return _mean_joint_distance(self._centered[i], target._centered)

    def distances_to(self, pose: Pose) -> np.ndarray:
        return _mean_joint_distance(center_pose(pose), self._centered)


def cross_distances(rows: PoseDataset, cols: PoseDataset) -> np.ndarray:
    """Dense ``len(rows) x len(cols)`` pose-distance grid."""
    out = np.empty((len(rows), len(cols)))
    for i in range(len(rows)):
        out[i] = rows.distances_from(i, cols)
    return out


def pairwise_distance_matrix(
    dataset: PoseDataset,
    budget: int = DEFAULT_MATRIX_BUDGET,
    workers: int = 1,
    block: int = 256,
) -> DistanceMatrix:
    """All-pairs pose distances.

    Row blocks may be computed on ``workers`` threads; each entry is computed
    by the same kernel as :func:`pose_distance`, so the result does not
    depend on the worker count.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if n * n > budget:
        raise MatrixBudgetError(
            f"{n}x{n} distance matrix exceeds budget of {budget} entries; "
            "use per-anchor distance rows instead"
        )
    values = np.empty((n, n))
    c = dataset.centered

    def fill(start):
        stop = min(start + block, n)
        values[start:stop] = _mean_joint_distance(c[start:stop, None], c[None, :])

    starts = range(0, n, block)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, starts))
    else:
        for s in starts:
            fill(s)
    return DistanceMatrix(dataset.ids, values)
