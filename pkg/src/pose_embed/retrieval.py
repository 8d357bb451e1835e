"""Exact L2 retrieval over embeddings and the three pose-retrieval metrics.

Metrics score rank lists with ground-truth joints:

* pose difference @K: mean over queries of the smallest pose distance among
  the top K results;
* hit @K absolute: fraction of queries with a top-K result within
  ``threshold`` pixels (inclusive);
* hit @K relative: as above with the per-query threshold ``tau + slack``,
  where ``tau`` is the query's distance to its closest database pose.

Ties in any ranking are broken by ascending database id.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import EmbeddingModel
from .pose import PoseDataset, _mean_joint_distance, cross_distances
from .render import CanvasSpec, render_fitted

METRIC_KINDS = ("pose_difference", "hit_abs", "hit_rel")


class MissingGroundTruthError(KeyError):
    pass


class DegenerateDistancesError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingTable:
    ids: tuple
    vectors: np.ndarray

    def __post_init__(self):
        if len(self.ids) != len(self.vectors):
            raise ValueError("one vector per id required")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding vectors must be finite")

    def __len__(self):
        return len(self.ids)

    def id_rank(self) -> np.ndarray:
        order = sorted(range(len(self.ids)), key=lambda i: self.ids[i])
        rank = np.empty(len(self.ids), dtype=np.int64)
        rank[order] = np.arange(len(self.ids))
        return rank

    def save(self, path) -> None:
        np.savez(Path(path), ids=np.array(self.ids), vectors=self.vectors)

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        with np.load(Path(path)) as z:
            return cls(tuple(z["ids"].tolist()), z["vectors"])


@dataclass(frozen=True)
class RankList:
    query_id: object
    ids: tuple
    distances: np.ndarray

    def __len__(self):
        return len(self.ids)

    @property
    def entries(self):
        return list(zip(self.ids, self.distances.tolist()))


@dataclass(frozen=True)
class MetricCurve:
    kind: str
    ks: tuple
    values: np.ndarray

    def at(self, k: int) -> float:
        return float(self.values[self.ks.index(k)])


def embed_all(model: EmbeddingModel, split: PoseDataset, canvas: CanvasSpec, batch: int = 512) -> EmbeddingTable:
    """Embed ``forward(render(fit(pose)))`` for every pose; joints feed the renderer only."""
    if len(split) == 0:
        raise ValueError("cannot embed an empty split")
    rows = [
        model.forward(render_fitted(split.joints[s : s + batch], canvas))
        for s in range(0, len(split), batch)
    ]
    return EmbeddingTable(split.ids, np.concatenate(rows))


def _l2_to(query: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    diff = vectors - query
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _top_k(distances: np.ndarray, rank: np.ndarray, k: int) -> np.ndarray:
    return np.lexsort((rank, distances))[:k]


def rank_database(query_vector, table: EmbeddingTable, k: int, _rank=None) -> RankList:
    """The ``k`` nearest database rows by Euclidean distance (all rows if ``k`` exceeds the table)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(table) == 0:
        raise ValueError("empty database table")
    rank = table.id_rank() if _rank is None else _rank
    d = _l2_to(np.asarray(query_vector, dtype=np.float64), table.vectors)
    top = _top_k(d, rank, k)
    return RankList(None, tuple(table.ids[i] for i in top), d[top])


def embedding_distances(queries: EmbeddingTable, database: EmbeddingTable) -> np.ndarray:
    """``(n_query, n_db)`` Euclidean distances; row ``i`` equals what :func:`rank_database` sorts."""
    return np.stack([_l2_to(q, database.vectors) for q in queries.vectors])


def rank_all(queries: EmbeddingTable, database: EmbeddingTable, k: int) -> list[RankList]:
    rank = database.id_rank()
    out = []
    for qid, q in zip(queries.ids, queries.vectors):
        rl = rank_database(q, database, k, _rank=rank)
        out.append(RankList(qid, rl.ids, rl.distances))
    return out


def rank_from_distances(distances: np.ndarray, query_ids: Sequence, db_ids: Sequence, k: int) -> list[RankList]:
    """Rank lists from a precomputed ``(n_query, n_db)`` distance grid."""
    table_rank = EmbeddingTable(tuple(db_ids), np.zeros((len(db_ids), 0))).id_rank()
    out = []
    for qid, row in zip(query_ids, np.asarray(distances)):
        top = _top_k(row, table_rank, k)
        out.append(RankList(qid, tuple(db_ids[i] for i in top), row[top]))
    return out


def oracle_ranklists(queries: PoseDataset, database: PoseDataset, k: int) -> list[RankList]:
    """Rank the database by ground-truth pose distance."""
    return rank_from_distances(cross_distances(queries, database), queries.ids, database.ids, k)


def random_ranklists(queries: PoseDataset, database: PoseDataset, k: int, seed: int) -> list[RankList]:
    """Uniform draws without replacement. The stored "distance" is the rank position."""
    rng = np.random.default_rng(seed)
    k = min(k, len(database))
    out = []
    for qid in queries.ids:
        pick = rng.permutation(len(database))[:k]
        out.append(RankList(qid, tuple(database.ids[i] for i in pick), np.arange(k, dtype=np.float64)))
    return out


def fuse_distances(distances_a, distances_b) -> np.ndarray:
    """Divide each query row by its maximum, per method, then average the two."""
    a = np.asarray(distances_a, dtype=np.float64)
    b = np.asarray(distances_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("distance grids must cover the same queries and database")
    ma = a.max(axis=1, keepdims=True)
    mb = b.max(axis=1, keepdims=True)
    if np.any(ma <= 0) or np.any(mb <= 0):
        raise DegenerateDistancesError("a query row has zero maximum distance")
    return (a / ma + b / mb) / 2


def noisy_joint_distances(queries: PoseDataset, database: PoseDataset, sigma: float, seed: int) -> np.ndarray:
    """Pose distances between joint sets perturbed by N(0, sigma^2) pixel noise.

    Stand-in for a learned joint regressor in fusion experiments.
    """
    rng = np.random.default_rng(seed)
    noisy_q = PoseDataset(queries.ids, queries.joints + rng.normal(0, sigma, queries.joints.shape),
                          None, queries.root_index)
    noisy_d = PoseDataset(database.ids, database.joints + rng.normal(0, sigma, database.joints.shape),
                          None, database.root_index)
    return cross_distances(noisy_q, noisy_d)


def _result_pose_distances(rank_lists, queries: PoseDataset, database: PoseDataset) -> list[np.ndarray]:
    out = []
    for rl in rank_lists:
        try:
            qi = queries.index_of(rl.query_id)
            idx = [database.index_of(i) for i in rl.ids]
        except KeyError as exc:
            raise MissingGroundTruthError(exc.args[0]) from None
        out.append(_mean_joint_distance(queries.centered[qi], database.centered[idx]))
    return out


def _best_by_k(per_query: list[np.ndarray], ks) -> np.ndarray:
    """``(n_query, len(ks))`` minimum over the first K entries of each array."""
    out = np.empty((len(per_query), len(ks)))
    for i, d in enumerate(per_query):
        if len(d) == 0:
            out[i] = np.inf
            continue
        running = np.minimum.accumulate(d)
        for j, k in enumerate(ks):
            out[i, j] = running[min(k, len(d)) - 1]
    return out


def query_taus(queries: PoseDataset, database: PoseDataset) -> np.ndarray:
    """Distance from each query to its closest database pose."""
    if len(database) == 0:
        raise ValueError("empty database")
    return np.array([_mean_joint_distance(queries.centered[i], database.centered).min()
                     for i in range(len(queries))])


def per_query_best(rank_lists, queries, database, ks) -> np.ndarray:
    """Best (smallest) ground-truth pose distance within the top K, per query and K."""
    return _best_by_k(_result_pose_distances(rank_lists, queries, database), tuple(ks))


def pose_difference_at_k(rank_lists, queries, database, ks) -> MetricCurve:
    ks = tuple(ks)
    return MetricCurve("pose_difference", ks, per_query_best(rank_lists, queries, database, ks).mean(axis=0))


def hit_at_k_absolute(rank_lists, queries, database, ks, threshold: float = 15.0) -> MetricCurve:
    ks = tuple(ks)
    best = per_query_best(rank_lists, queries, database, ks)
    return MetricCurve("hit_abs", ks, (best <= threshold).mean(axis=0))


def hit_at_k_relative(rank_lists, queries, database, ks, slack: float = 10.0) -> MetricCurve:
    ks = tuple(ks)
    best = per_query_best(rank_lists, queries, database, ks)
    tau = query_taus(queries, database)
    q_order = [queries.index_of(rl.query_id) for rl in rank_lists]
    return MetricCurve("hit_rel", ks, (best <= (tau[q_order] + slack)[:, None]).mean(axis=0))


def all_metrics(rank_lists, queries, database, ks, threshold=15.0, slack=10.0) -> list[MetricCurve]:
    return [
        pose_difference_at_k(rank_lists, queries, database, ks),
        hit_at_k_absolute(rank_lists, queries, database, ks, threshold),
        hit_at_k_relative(rank_lists, queries, database, ks, slack),
    ]


def check_curve(curve: MetricCurve) -> None:
    """Raise if a curve breaks its range or monotonicity contract."""
    v = curve.values
    if curve.kind == "pose_difference":
        if np.any(np.diff(v) > 0):
            raise AssertionError("pose difference increased with K")
    else:
        if np.any((v < 0) | (v > 1)):
            raise AssertionError(f"{curve.kind} outside [0, 1]")
        if np.any(np.diff(v) < 0):
            raise AssertionError(f"{curve.kind} decreased with K")


def bootstrap_interval(samples, n_boot: int = 2000, level: float = 0.95, seed: int = 0):
    """Percentile bootstrap interval for the mean of per-query values."""
    samples = np.asarray(samples, dtype=np.float64)
    rng = np.random.default_rng(seed)
    means = samples[rng.integers(0, len(samples), size=(n_boot, len(samples)))].mean(axis=1)
    lo = (1 - level) / 2
    return float(np.quantile(means, lo)), float(np.quantile(means, 1 - lo))


def write_metrics_csv(results, path) -> None:
    """``results``: iterable of ``(method, MetricCurve)``. Columns: method, metric, K, value."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "metric", "K", "value"])
        for method, curve in results:
            for k, v in zip(curve.ks, curve.values):
                w.writerow([method, curve.kind, k, repr(float(v))])


def read_metrics_csv(path) -> dict:
    out = {}
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            out[(row["method"], row["metric"], int(row["K"]))] = float(row["value"])
    return out


def write_ranklists(rank_lists, path, method: str = "") -> None:
    """One JSON object per query: ``{"method", "query_id", "results": [[id, distance], ...]}``."""
    with open(Path(path), "a") as fh:
        for rl in rank_lists:
            fh.write(json.dumps({"method": method, "query_id": rl.query_id,
                                 "results": [[i, d] for i, d in rl.entries]}) + "\n")


def read_ranklists(path, method: str | None = None) -> list[RankList]:
    out = []
    with open(Path(path)) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if method is not None and rec["method"] != method:
                continue
            ids = tuple(r[0] for r in rec["results"])
            out.append(RankList(rec["query_id"], ids, np.array([r[1] for r in rec["results"]], dtype=float)))
    return out
