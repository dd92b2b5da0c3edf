"""Class-aware representation synthesis for minority classes.

Each class keeps an EMA centroid in representation space; its compactness is
the mean cosine similarity between in-batch representations and that
centroid. Tighter classes get a smaller synthesis radius (radius = 1 /
compactness, floored), and minority-class samples are expanded with noisy
copies h' = h + (h/||h||) * (radius * delta), delta standard normal. The
product is elementwise; a scalar-projection reading of the same recipe would
reduce to radial scaling and is deliberately not implemented.

Synthesized representations feed the head losses only; they never enter the
pool census or the class prior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

ALPHA_FLOOR = 0.1


@dataclass
class SynthesizedRep:
    representation: np.ndarray
    label: int
    origin_id: int


class ClassStats:
    """Per-class EMA centroid, compactness, synthesis radius, running count."""

    def __init__(self, num_classes: int, rep_dim: int):
        self.num_classes = num_classes
        self.rep_dim = rep_dim
        self.centroids = np.zeros((num_classes, rep_dim))
        self.has_centroid = np.zeros(num_classes, dtype=bool)
        self.alpha = np.full(num_classes, np.nan)
        self.radius = np.full(num_classes, np.nan)
        self.count_seen = np.zeros(num_classes, dtype=np.int64)

    def rows(self) -> list[dict]:
        """Diagnostic dump rows: one dict per class with stats so far."""
        out = []
        for c in range(self.num_classes):
            out.append(
                {
                    "class": c,
                    "alpha": float(self.alpha[c]) if np.isfinite(self.alpha[c]) else None,
                    "radius": float(self.radius[c]) if np.isfinite(self.radius[c]) else None,
                    "count": int(self.count_seen[c]),
                }
            )
        return out


def update_class_stats(
    stats: ClassStats,
    reps: np.ndarray,
    labels: np.ndarray,
    ema_decay: float = 0.9,
) -> None:
    """Fold a batch of (representation, label) pairs into the running stats.

    Centroids move by EMA toward the batch mean of each class present (a
    fresh class adopts the batch mean outright). Compactness is the mean
    cosine between the batch's class members and the updated centroid;
    radius = 1 / max(alpha, 0.1). Zero-norm representations or centroids are
    skipped with a warning (their cosine is undefined).
    """
    if not 0.0 <= ema_decay < 1.0:
        raise ValueError("ema_decay must lie in [0, 1)")
    reps = np.atleast_2d(np.asarray(reps, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    for c in np.unique(labels):
        members = reps[labels == c]
        norms = np.linalg.norm(members, axis=1)
        if np.any(norms == 0):
            logger.warning("class %d: skipping %d zero-norm representation(s)", c, int((norms == 0).sum()))
            members = members[norms > 0]
            norms = norms[norms > 0]
        if members.shape[0] == 0:
            continue
        batch_mean = members.mean(axis=0)
        if stats.has_centroid[c]:
            stats.centroids[c] = ema_decay * stats.centroids[c] + (1.0 - ema_decay) * batch_mean
        else:
            stats.centroids[c] = batch_mean
            stats.has_centroid[c] = True
        centroid_norm = np.linalg.norm(stats.centroids[c])
        if centroid_norm == 0:
            logger.warning("class %d: zero-norm centroid, compactness left unchanged", c)
            continue
        cosines = (members @ stats.centroids[c]) / (norms * centroid_norm)
        alpha = float(np.clip(np.mean(cosines), -1.0, 1.0))
        stats.alpha[c] = alpha
        stats.radius[c] = 1.0 / max(alpha, ALPHA_FLOOR)
        stats.count_seen[c] += members.shape[0]


def minority_classes(phi: np.ndarray) -> np.ndarray:
    """Classes whose pool count is strictly below the (lower) median count."""
    phi = np.asarray(phi)
    if phi.ndim != 1 or phi.size == 0 or np.any(phi < 0):
        raise ValueError("phi must be a 1-D vector of non-negative counts")
    lower_median = np.sort(phi)[(phi.size - 1) // 2]
    return np.flatnonzero(phi < lower_median)


def synthesize(
    h: np.ndarray,
    radius: float,
    rng: np.random.Generator,
    count: int = 10,
    label: int = -1,
    origin_id: int = -1,
) -> list[SynthesizedRep]:
    """Noisy copies of one representation along its unit direction."""
    h = np.asarray(h, dtype=np.float64)
    norm = np.linalg.norm(h)
    if norm == 0:
        raise ValueError("cannot synthesize from a zero-norm representation")
    if radius <= 0:
        raise ValueError("radius must be positive")
    unit = h / norm
    noise = rng.standard_normal((count, h.size))
    reps = h + unit * (radius * noise)
    return [SynthesizedRep(reps[i], label, origin_id) for i in range(count)]


def plan_synthesis(
    labels: np.ndarray,
    minority: np.ndarray,
    stats: ClassStats,
    rng: np.random.Generator,
    count: int = 10,
) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """Pick batch rows to expand and draw their noise/radii up front.

    Returns (origin row indices repeated ``count`` times, per-copy radii,
    per-copy noise) or None when the batch holds no minority-class sample
    with an initialized radius. Drawing the noise here keeps the training
    step's synthesis a deterministic function of (state, plan).
    """
    labels = np.asarray(labels, dtype=np.int64)
    minority_set = set(int(c) for c in minority)
    rows = [
        i
        for i, lab in enumerate(labels)
        if int(lab) in minority_set and np.isfinite(stats.radius[lab])
    ]
    if not rows:
        return None
    origin = np.repeat(np.array(rows, dtype=np.int64), count)
    radii = stats.radius[labels[origin]]
    noise = rng.standard_normal((origin.size, stats.rep_dim))
    return origin, radii, noise


def apply_synthesis_plan(
    reps: np.ndarray, origin: np.ndarray, radii: np.ndarray, noise: np.ndarray
) -> np.ndarray:
    """Materialize planned copies from current representations."""
    base = reps[origin]
    norms = np.linalg.norm(base, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot synthesize from a zero-norm representation")
    return base + (base / norms) * (radii[:, None] * noise)


def augment_batch(
    reps: np.ndarray,
    labels: np.ndarray,
    stats: ClassStats,
    phi: np.ndarray,
    rng: np.random.Generator,
    count: int = 10,
) -> tuple[np.ndarray, np.ndarray]:
    """Extend a batch of representations with minority-class copies.

    Originals are retained; every sample whose label is a minority class of
    ``phi`` contributes ``count`` synthesized representations carrying its
    own label. The census ``phi`` itself is never touched.
    """
    reps = np.atleast_2d(np.asarray(reps, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    plan = plan_synthesis(labels, minority_classes(phi), stats, rng, count)
    if plan is None:
        return reps, labels
    origin, radii, noise = plan
    synth = apply_synthesis_plan(reps, origin, radii, noise)
    return np.concatenate([reps, synth], axis=0), np.concatenate([labels, labels[origin]])
