"""Class-aware representation synthesis, step by step.

Each class tracks an EMA centroid in representation space; compactness is
the mean cosine of members to that centroid, and the synthesis radius is its
reciprocal (floored). Tight clusters get gentle copies, loose ones get wider
exploration, and only classes below the pool's median count are expanded.
"""

import numpy as np

from pseudopool.augment import (
    ClassStats,
    augment_batch,
    minority_classes,
    synthesize,
    update_class_stats,
)

rng = np.random.default_rng(0)

stats = ClassStats(num_classes=3, rep_dim=8)
tight = rng.normal(loc=4.0, scale=0.2, size=(30, 8))
medium = rng.normal(loc=2.0, scale=1.0, size=(30, 8))
loose = rng.normal(loc=1.0, scale=2.5, size=(30, 8))
for c, reps in enumerate((tight, medium, loose)):
    update_class_stats(stats, reps, np.full(30, c))

print("compactness drives how far synthesized copies may wander:")
for row in stats.rows():
    print(f"  class {row['class']}: compactness {row['alpha']:.3f} -> radius {row['radius']:.3f}")

phi = np.array([140, 40, 12])
print(f"\npool census {phi} -> minority classes {[int(c) for c in minority_classes(phi)]}")

h = np.array([3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
copies = synthesize(h, radius=stats.radius[2], rng=rng, count=3, label=2, origin_id=7)
print(f"\nthree copies of one representation (norm {np.linalg.norm(h):.1f}):")
for rep in copies:
    print("  ", np.round(rep.representation[:4], 3), "...")

batch_reps = np.vstack([tight[:2], medium[:2], loose[:3]])
batch_labels = np.array([0, 0, 1, 1, 2, 2, 2])
out_reps, out_labels = augment_batch(batch_reps, batch_labels, stats, phi, rng)
print(f"\nbatch of {len(batch_labels)} -> {len(out_labels)} after expanding "
      f"{int(np.sum(batch_labels == 2))} minority samples tenfold")
print(f"census untouched by augmentation: {phi}")
