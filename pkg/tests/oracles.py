"""Brute-force reference implementations used only by the tests.

They work on plain Python floats and lists and share no code with the
package beyond the data containers.
"""

import math


def brute_pose_distance(a, b, root):
    """Mean joint distance after root alignment, one float operation at a time."""
    total = 0.0
    for j in range(16):
        ax = float(a[j][0]) - float(a[root][0])
        ay = float(a[j][1]) - float(a[root][1])
        bx = float(b[j][0]) - float(b[root][0])
        by = float(b[j][1]) - float(b[root][1])
        dx = ax - bx
        dy = ay - by
        total += math.sqrt(dx * dx + dy * dy)
    return total / 16


def brute_distance_table(dataset):
    joints = dataset.joints.tolist()
    n = len(joints)
    return [[brute_pose_distance(joints[i], joints[j], dataset.root_index) for j in range(n)] for i in range(n)]


def brute_sets(dataset, spec, table=None):
    """{anchor_id: (positives as (d, id)-sorted list, negatives list)} by the mining rules."""
    table = table or brute_distance_table(dataset)
    ids = dataset.ids
    out = {}
    for i, aid in enumerate(ids):
        cands = sorted((table[i][j], ids[j]) for j in range(len(ids)) if j != i)
        closest = {pid for _, pid in cands[: spec.pos_closest_count]}
        positives = [pid for d, pid in cands if pid in closest or d < spec.pos_threshold]
        pos_set = set(positives)
        negatives = [pid for d, pid in cands if d > spec.neg_threshold and pid not in pos_set]
        out[aid] = (positives, negatives[: spec.neg_cap])
    return out


def brute_triplets(dataset, spec, table=None):
    sets = brute_sets(dataset, spec, table)
    out = []
    for aid in sorted(dataset.ids):
        pos, neg = sets[aid]
        for p in pos:
            for n in neg:
                out.append((aid, p, n))
    return out


def full_sort_knn(query, vectors, ids, k):
    """Sort every row by (Euclidean distance, id) with scalar arithmetic."""
    scored = []
    for row, rid in zip(vectors.tolist(), ids):
        s = 0.0
        for q, v in zip(query.tolist(), row):
            s += (v - q) * (v - q)
        scored.append((math.sqrt(s), rid))
    scored.sort()
    return [rid for _, rid in scored[:k]]
