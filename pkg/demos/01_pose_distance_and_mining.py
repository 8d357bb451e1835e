"""
Pose distance and triplet mining
================================

Two poses are compared after moving both pelvises to the origin. The
distance is the mean Euclidean gap over all 16 joints. Mining turns those
distances into (anchor, positive, negative) triplets.
"""

import numpy as np

from pose_embed import PoseDataset, TripletSpec, TripletStream, generate_synthetic, pose_distance
from pose_embed.mining import negative_set, positive_set

# A pose and the same pose shifted across the image are at distance 0.
ds = generate_synthetic(6, seed=0)
a = ds[0]
print("d(a, a shifted) =", pose_distance(a, a.translated(120.0, -40.0)))

# Moving every non-pelvis joint 16 px to the right gives 15 * 16 / 16 = 15 px.
moved = a.joints.copy()
moved[np.arange(16) != a.root_index, 0] += 16
b = PoseDataset(["b"], moved[None])[0]
print("d(a, b) =", pose_distance(a, b))

# %%
# Mining on a small synthetic set. Positives are the two nearest poses plus
# anything under 7 px. Negatives are the closest poses beyond 15 px, capped.
train = generate_synthetic(300, seed=1)
spec = TripletSpec(neg_cap=50)
anchor = train.ids[0]
pos = positive_set(anchor, train, spec)
neg = negative_set(anchor, train, spec)
print(f"anchor {anchor}: {len(pos)} positives, {len(neg)} negatives")
print("nearest negative distance:", train.distances_from(0)[train.index_of(neg[0])].round(2))

# %%
# The stream is lazy. Counting never builds the product.
stream = TripletStream(train, spec)
print("triplets:", stream.count())
for t, _ in zip(stream, range(3)):
    print("  ", t)
