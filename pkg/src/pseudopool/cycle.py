"""The self-reinforcing pseudo-label cycle: filter, vote, expand, renormalize.

Each unlabeled sample is predicted under a weak and a strong view; a sample
is reliable only when both views clear the confidence threshold strictly and
agree on the label. Reliable hits accumulate as votes. A sample joins the
labeled pool while a strict majority of its cumulative votes backs one class;
assignments are recomputed from the vote tallies on every commit, so early
mistakes wash out. The updated pool's per-class census defines the class
prior fed to the logit-adjusted loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import AugmentationPolicy, UnlabeledView, strong_view, strong_view_batch, weak_view, weak_view_batch
from .losses import ClassPrior, softmax
from .network import ModelState, encode, head_logits


@dataclass
class ViewPrediction:
    """Pseudo-label and confidence per augmentation view of one sample."""

    label_weak: int
    conf_weak: float
    label_strong: int
    conf_strong: float


@dataclass
class ViewPredictionBatch:
    labels_weak: np.ndarray
    confs_weak: np.ndarray
    labels_strong: np.ndarray
    confs_strong: np.ndarray


def _predict_one(state: ModelState, x: np.ndarray, branch: str) -> tuple[int, float]:
    probs = softmax(head_logits(state, branch, encode(state, x)))
    # np.argmax breaks ties toward the lowest class index
    label = int(np.argmax(probs))
    return label, float(probs[label])


def predict_views(
    state: ModelState,
    x_u: np.ndarray,
    policy: AugmentationPolicy,
    rng: np.random.Generator,
    branch: str = "primary",
) -> ViewPrediction:
    """Predict (argmax, max softmax) for the weak and strong view of a sample."""
    lw, cw = _predict_one(state, weak_view(x_u, policy, rng), branch)
    ls, cs = _predict_one(state, strong_view(x_u, policy, rng), branch)
    return ViewPrediction(lw, cw, ls, cs)


def predict_views_batch(
    state: ModelState,
    X_u: np.ndarray,
    policy: AugmentationPolicy,
    rng: np.random.Generator,
    branch: str = "primary",
) -> ViewPredictionBatch:
    """Batched view predictions (weak noise drawn first, then strong)."""
    weak = weak_view_batch(X_u, policy, rng)
    strong = strong_view_batch(X_u, policy, rng)
    pw = softmax(head_logits(state, branch, encode(state, weak)))
    ps = softmax(head_logits(state, branch, encode(state, strong)))
    return ViewPredictionBatch(
        labels_weak=np.argmax(pw, axis=1),
        confs_weak=np.max(pw, axis=1),
        labels_strong=np.argmax(ps, axis=1),
        confs_strong=np.max(ps, axis=1),
    )


def reliability_mask(vp: ViewPrediction, tau: float) -> int:
    """1 iff both confidences strictly exceed tau and the view labels agree.

    tau = 1.0 is legal and selects nothing (the comparisons are strict).
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    return int(
        (vp.conf_weak > tau) and (vp.conf_strong > tau) and (vp.label_weak == vp.label_strong)
    )


def reliability_mask_batch(vpb: ViewPredictionBatch, tau: float) -> np.ndarray:
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    return (
        (vpb.confs_weak > tau)
        & (vpb.confs_strong > tau)
        & (vpb.labels_weak == vpb.labels_strong)
    )


class PseudoRegistry:
    """Cumulative per-sample vote tallies over the whole training run."""

    def __init__(self, ids: np.ndarray, num_classes: int):
        self.ids = np.asarray(ids, dtype=np.int64).copy()
        if np.unique(self.ids).size != self.ids.size:
            raise ValueError("registry ids must be unique")
        self.num_classes = num_classes
        self._index = {int(i): pos for pos, i in enumerate(self.ids)}
        self.votes = np.zeros((self.ids.size, num_classes), dtype=np.int64)
        self.first_vote_epoch = np.full(self.ids.size, -1, dtype=np.int64)
        self.resolved = np.full(self.ids.size, -1, dtype=np.int64)
        self.current_epoch = 0

    def begin_epoch(self, epoch: int) -> None:
        self.current_epoch = epoch

    def record_vote(self, sample_id: int, label: int) -> None:
        """Count one reliable hit for (sample, label); cumulative, never reset."""
        pos = self._index.get(int(sample_id))
        if pos is None:
            raise KeyError(f"unknown unlabeled id {sample_id}")
        if not 0 <= label < self.num_classes:
            raise ValueError(f"label {label} outside [0, {self.num_classes})")
        self.votes[pos, label] += 1
        if self.first_vote_epoch[pos] < 0:
            self.first_vote_epoch[pos] = self.current_epoch

    def record_votes(self, sample_ids: np.ndarray, labels: np.ndarray) -> None:
        for sid, lab in zip(sample_ids, labels):
            self.record_vote(int(sid), int(lab))

    def epochs_since_first_vote(self, sample_id: int) -> int:
        pos = self._index[int(sample_id)]
        first = self.first_vote_epoch[pos]
        return -1 if first < 0 else self.current_epoch - int(first)

    def resolve(self, min_votes: int, majority_frac: float) -> dict[int, int]:
        """Current assignments: ids whose modal class holds a strict majority.

        A sample is assigned iff its total votes reach ``min_votes`` and the
        modal class share strictly exceeds ``majority_frac``; modal ties stay
        unassigned. Recomputed from the cumulative tallies, so an id can gain,
        change, or lose its label as votes accrue.
        """
        if min_votes < 1:
            raise ValueError("min_votes must be >= 1")
        if not 0.5 <= majority_frac <= 1.0:
            raise ValueError("majority_frac must lie in [0.5, 1]")
        totals = self.votes.sum(axis=1)
        modal = np.argmax(self.votes, axis=1)
        modal_count = self.votes[np.arange(self.votes.shape[0]), modal]
        tied = (self.votes == modal_count[:, None]).sum(axis=1) > 1
        ok = (totals >= min_votes) & (modal_count > majority_frac * totals) & ~tied
        self.resolved = np.where(ok, modal, -1)
        return {int(self.ids[pos]): int(modal[pos]) for pos in np.flatnonzero(ok)}

    def snapshot(self) -> dict:
        """JSON-ready export: per id, vote counts, resolved label, first epoch."""
        entries = {}
        for pos, sid in enumerate(self.ids):
            counts = {
                int(c): int(v) for c, v in enumerate(self.votes[pos]) if v > 0
            }
            if not counts and self.resolved[pos] < 0:
                continue
            entries[str(int(sid))] = {
                "votes": counts,
                "resolved": int(self.resolved[pos]) if self.resolved[pos] >= 0 else None,
                "first_vote_epoch": int(self.first_vote_epoch[pos])
                if self.first_vote_epoch[pos] >= 0
                else None,
            }
        return {
            "num_classes": self.num_classes,
            "epoch": self.current_epoch,
            "entries": entries,
        }


class LabeledPool:
    """The base labeled set plus the currently accepted pseudo-labeled samples.

    Base examples are immutable: never removed, never relabeled. The pseudo
    portion is replaced wholesale on every update.
    """

    def __init__(
        self,
        base_ids: np.ndarray,
        base_features: np.ndarray,
        base_labels: np.ndarray,
        num_classes: int,
    ):
        self.base_ids = np.asarray(base_ids, dtype=np.int64)
        self.base_features = np.asarray(base_features, dtype=np.float64)
        self.base_labels = np.asarray(base_labels, dtype=np.int64)
        self.num_classes = num_classes
        self.n = np.bincount(self.base_labels, minlength=num_classes)
        if np.any(self.n < 1):
            raise ValueError("every class needs at least one base labeled sample")
        self.pseudo_ids = np.zeros(0, dtype=np.int64)
        self.pseudo_features = np.zeros((0, self.base_features.shape[1]))
        self.pseudo_labels = np.zeros(0, dtype=np.int64)
        self._base_id_set = set(int(i) for i in self.base_ids)

    @classmethod
    def from_split(cls, split, num_classes: int) -> "LabeledPool":
        return cls(split.ids, split.features, split.labels, num_classes)

    @property
    def m(self) -> np.ndarray:
        return np.bincount(self.pseudo_labels, minlength=self.num_classes)

    @property
    def phi(self) -> np.ndarray:
        return self.n + self.m

    @property
    def size(self) -> int:
        return self.base_ids.size + self.pseudo_ids.size

    @property
    def pseudo_size(self) -> int:
        return self.pseudo_ids.size

    def features(self) -> np.ndarray:
        if self.pseudo_ids.size == 0:
            return self.base_features
        return np.concatenate([self.base_features, self.pseudo_features], axis=0)

    def labels(self) -> np.ndarray:
        if self.pseudo_ids.size == 0:
            return self.base_labels
        return np.concatenate([self.base_labels, self.pseudo_labels])

    def recount(self) -> np.ndarray:
        """Per-class census recomputed from the raw example arrays (oracle path)."""
        return np.bincount(self.labels(), minlength=self.num_classes)

    def with_assignments(
        self, assignments: dict[int, int], source: UnlabeledView
    ) -> "LabeledPool":
        """New pool whose pseudo portion is exactly ``assignments``."""
        clone = LabeledPool(self.base_ids, self.base_features, self.base_labels, self.num_classes)
        if not assignments:
            return clone
        ids = np.array(sorted(assignments), dtype=np.int64)
        collisions = [int(i) for i in ids if int(i) in self._base_id_set]
        if collisions:
            raise ValueError(f"pseudo ids collide with base labeled ids: {collisions[:5]}")
        index = {int(i): pos for pos, i in enumerate(source.ids)}
        try:
            rows = np.array([index[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"assignment id {exc} not present in the unlabeled view") from None
        clone.pseudo_ids = ids
        clone.pseudo_features = source.features[rows]
        clone.pseudo_labels = np.array([assignments[int(i)] for i in ids], dtype=np.int64)
        return clone


def update_pool(
    pool: LabeledPool, assignments: dict[int, int], source: UnlabeledView
) -> LabeledPool:
    """Replace the pool's pseudo portion with the current assignments."""
    return pool.with_assignments(assignments, source)


def class_distribution(pool: LabeledPool) -> ClassPrior:
    """Normalized census of the updated pool (the logit-adjustment prior)."""
    phi = pool.phi
    total = int(phi.sum())
    if total <= 0:
        raise ValueError("pool census is empty")
    if np.any(phi == 0):
        raise ValueError("a class with zero pool count has an undefined log prior")
    return ClassPrior(phi / total)
