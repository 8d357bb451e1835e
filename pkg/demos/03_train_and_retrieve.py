"""
Training an embedding and scoring retrieval
===========================================

A small MLP is trained with the triplet loss on rendered poses, then
database poses are ranked for each query by embedding distance. The
learned ranking is compared with ground-truth (oracle) and random lists.
"""

import numpy as np

from pose_embed import RunConfig
from pose_embed.mining import TripletStream
from pose_embed.pipeline import prepare_splits
from pose_embed.retrieval import (
    all_metrics,
    embed_all,
    embedding_distances,
    oracle_ranklists,
    random_ranklists,
    rank_from_distances,
)
from pose_embed.train import train

cfg = RunConfig(n_synthetic=900, n_train=500, n_db=300, n_query=100, steps=150, canvas_side=32,
                hidden_sizes=(128,), embedding_dim=16)
data = prepare_splits(cfg)
queries, database = data.split("query"), data.split("database")

stream = TripletStream(data, cfg.triplet_spec())
print(f"{stream.count():,} triplets from {len(stream.train)} training poses")

model, losses = train(stream, cfg.train_config(), cfg.canvas(), cfg.augmentation())
print(f"batch loss: first 10 steps {losses[:10].mean():.4f}, last 10 steps {losses[-10:].mean():.4f}")

# %%
# Rank the database for each query and compute the three curves.
ks = (1, 5, 10, 20)
dist = embedding_distances(embed_all(model, queries, cfg.canvas()), embed_all(model, database, cfg.canvas()))
methods = {
    "learned": rank_from_distances(dist, queries.ids, database.ids, max(ks)),
    "oracle": oracle_ranklists(queries, database, max(ks)),
    "random": random_ranklists(queries, database, max(ks), seed=0),
}
for name, lists in methods.items():
    for curve in all_metrics(lists, queries, database, ks):
        print(f"{name:8s} {curve.kind:16s}", "  ".join(f"@{k}={v:6.3f}" for k, v in zip(ks, curve.values)))
