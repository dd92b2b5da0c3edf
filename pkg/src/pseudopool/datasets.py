"""Seeded long-tailed synthetic datasets, augmentation views, and CSV ingest.

Splits are generated from per-class Gaussians whose means sit on a scaled
circle in the first two feature dimensions; the remaining dimensions carry
pure noise. Every operation that takes a seed uses numpy's PCG64 generator
(``np.random.default_rng``), so identical seeds give bit-identical splits.

Hidden ground truth for unlabeled samples lives only on ``UnlabeledSplit``;
training code receives an ``UnlabeledView`` projection that does not carry it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LABELED_SHAPES = ("long_tailed", "arbitrary")
UNLABELED_SHAPES = ("consistent", "inverse", "uniform", "arbitrary")
ARBITRARY_MODES = ("permutation", "dirichlet")
CSV_ROLES = ("labeled", "unlabeled", "test")


@dataclass
class DatasetSpec:
    """Recipe for one long-tailed labeled/unlabeled/test split family."""

    num_classes: int
    feature_dim: int
    n_max: int
    m_max: int
    gamma_l: float = 1.0
    gamma_u: float = 1.0
    labeled_shape: str = "long_tailed"
    unlabeled_shape: str = "consistent"
    test_per_class: int = 40
    mean_scale: float = 2.5
    cov_scale: float = 1.0
    class_means: np.ndarray | None = None
    arbitrary_mode: str = "permutation"
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.n_max < 1 or self.m_max < 1:
            raise ValueError("n_max and m_max must be positive")
        if self.gamma_l < 1 or self.gamma_u < 1:
            raise ValueError("imbalance ratios must be >= 1")
        if self.n_max // self.gamma_l < 1:
            raise ValueError("n_max / gamma_l < 1 would force an empty class")
        if self.m_max // self.gamma_u < 1:
            raise ValueError("m_max / gamma_u < 1 would force an empty class")
        if self.labeled_shape not in LABELED_SHAPES:
            raise ValueError(f"labeled_shape must be one of {LABELED_SHAPES}")
        if self.unlabeled_shape not in UNLABELED_SHAPES:
            raise ValueError(f"unlabeled_shape must be one of {UNLABELED_SHAPES}")
        if self.arbitrary_mode not in ARBITRARY_MODES:
            raise ValueError(f"arbitrary_mode must be one of {ARBITRARY_MODES}")
        if self.test_per_class < 1:
            raise ValueError("test_per_class must be positive")
        if self.cov_scale <= 0:
            raise ValueError("cov_scale must be positive")
        if self.class_means is not None:
            means = np.asarray(self.class_means, dtype=np.float64)
            if means.shape != (self.num_classes, self.feature_dim):
                raise ValueError(
                    "class_means must have shape (num_classes, feature_dim)"
                )


@dataclass
class LabeledExample:
    id: int
    features: np.ndarray
    label: int


@dataclass
class UnlabeledExample:
    id: int
    features: np.ndarray
    hidden_label: int


@dataclass
class LabeledSplit:
    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def class_counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes)


@dataclass
class UnlabeledSplit:
    ids: np.ndarray
    features: np.ndarray
    hidden_labels: np.ndarray

    def class_counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.hidden_labels, minlength=num_classes)


@dataclass
class UnlabeledView:
    """Projection of the unlabeled split handed to training code.

    Deliberately lacks any ground-truth field; the hidden labels stay on
    ``UnlabeledSplit`` and are consumed by the metrics module alone.
    """

    ids: np.ndarray
    features: np.ndarray


@dataclass
class SplitBundle:
    spec: DatasetSpec
    labeled: LabeledSplit
    unlabeled: UnlabeledSplit
    test: LabeledSplit

    def unlabeled_view(self) -> UnlabeledView:
        return UnlabeledView(ids=self.unlabeled.ids, features=self.unlabeled.features)


def long_tailed_counts(n_max: int, gamma: float, num_classes: int) -> np.ndarray:
    """Exponential long-tailed class counts: head n_max, head/tail ratio gamma.

    counts[c] = max(1, floor(n_max * gamma ** (-c / (C - 1)))).
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if n_max < gamma:
        raise ValueError("n_max < gamma would force zero-count classes")
    exponents = -np.arange(num_classes, dtype=np.float64) / (num_classes - 1)
    raw = n_max * np.power(float(gamma), exponents)
    return np.maximum(1, np.floor(raw).astype(np.int64))


def shape_counts(
    base_counts: np.ndarray,
    shape: str,
    seed: int | np.random.Generator | None = None,
    arbitrary_mode: str = "permutation",
) -> np.ndarray:
    """Reshape a per-class count profile for the unlabeled split."""
    counts = np.asarray(base_counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0 or np.any(counts < 1):
        raise ValueError("base_counts must be a 1-D vector of positive counts")
    if shape == "consistent":
        return counts.copy()
    if shape == "inverse":
        return counts[::-1].copy()
    if shape == "uniform":
        return np.full_like(counts, int(np.rint(counts.mean())))
    if shape == "arbitrary":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        if arbitrary_mode == "permutation":
            return rng.permutation(counts)
        if arbitrary_mode == "dirichlet":
            return _dirichlet_counts(counts, rng)
        raise ValueError(f"arbitrary_mode must be one of {ARBITRARY_MODES}")
    raise ValueError(f"shape must be one of {UNLABELED_SHAPES}")


def _dirichlet_counts(base_counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet(1) re-apportionment of the profile's total, every class >= 1."""
    total = int(base_counts.sum())
    weights = rng.dirichlet(np.ones(base_counts.size))
    raw = weights * total
    counts = np.floor(raw).astype(np.int64)
    # Largest-remainder fill, then steal from the max to guarantee counts >= 1.
    remainder = total - int(counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:remainder]] += 1
    while np.any(counts < 1):
        counts[np.argmax(counts)] -= 1
        counts[np.argmin(counts)] += 1
    return counts


def circle_class_means(num_classes: int, feature_dim: int, scale: float) -> np.ndarray:
    """Class means evenly spaced on a circle in the first two dimensions."""
    means = np.zeros((num_classes, feature_dim), dtype=np.float64)
    if feature_dim == 1:
        means[:, 0] = scale * np.linspace(-1.0, 1.0, num_classes)
        return means
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means[:, 0] = scale * np.cos(angles)
    means[:, 1] = scale * np.sin(angles)
    return means


def generate_splits(spec: DatasetSpec) -> SplitBundle:
    """Draw labeled/unlabeled/test splits for a spec, bit-identical per seed."""
    spec.validate()
    shape_ss, data_ss = np.random.SeedSequence(spec.seed).spawn(2)
    shape_rng = np.random.default_rng(shape_ss)
    data_rng = np.random.default_rng(data_ss)

    labeled_counts = long_tailed_counts(spec.n_max, spec.gamma_l, spec.num_classes)
    if spec.labeled_shape == "arbitrary":
        labeled_counts = shape_counts(
            labeled_counts, "arbitrary", shape_rng, spec.arbitrary_mode
        )
    unlabeled_counts = shape_counts(
        long_tailed_counts(spec.m_max, spec.gamma_u, spec.num_classes),
        spec.unlabeled_shape,
        shape_rng,
        spec.arbitrary_mode,
    )

    if spec.class_means is not None:
        means = np.asarray(spec.class_means, dtype=np.float64)
    else:
        means = circle_class_means(spec.num_classes, spec.feature_dim, spec.mean_scale)

    def draw(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        feats = []
        labels = []
        for c, count in enumerate(counts):
            noise = data_rng.standard_normal((int(count), spec.feature_dim))
            feats.append(means[c] + spec.cov_scale * noise)
            labels.append(np.full(int(count), c, dtype=np.int64))
        return np.concatenate(feats, axis=0), np.concatenate(labels)

    lab_x, lab_y = draw(labeled_counts)
    unl_x, unl_y = draw(unlabeled_counts)
    test_x, test_y = draw(np.full(spec.num_classes, spec.test_per_class, dtype=np.int64))

    n, m = lab_x.shape[0], unl_x.shape[0]
    labeled = LabeledSplit(np.arange(n, dtype=np.int64), lab_x, lab_y)
    unlabeled = UnlabeledSplit(np.arange(n, n + m, dtype=np.int64), unl_x, unl_y)
    test = LabeledSplit(
        np.arange(n + m, n + m + test_x.shape[0], dtype=np.int64), test_x, test_y
    )
    return SplitBundle(spec=spec, labeled=labeled, unlabeled=unlabeled, test=test)


# ---------------------------------------------------------------------------
# Augmentation views
# ---------------------------------------------------------------------------


@dataclass
class AugmentationPolicy:
    """Weak/strong perturbation strengths for feature-vector views."""

    weak_noise_sigma: float
    strong_noise_sigma: float
    strong_mask_rate: float = 0.3

    def validate(self) -> None:
        if self.weak_noise_sigma < 0 or self.strong_noise_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.strong_noise_sigma < self.weak_noise_sigma:
            raise ValueError("strong view must perturb at least as hard as weak")
        if not 0.0 <= self.strong_mask_rate <= 1.0:
            raise ValueError("strong_mask_rate must lie in [0, 1]")


def policy_from_features(
    features: np.ndarray,
    weak_scale: float = 0.05,
    strong_scale: float = 0.15,
    mask_rate: float = 0.3,
) -> AugmentationPolicy:
    """Default policy: sigmas proportional to the mean per-feature std."""
    base = float(np.mean(np.std(np.asarray(features, dtype=np.float64), axis=0)))
    policy = AugmentationPolicy(
        weak_noise_sigma=weak_scale * base,
        strong_noise_sigma=strong_scale * base,
        strong_mask_rate=mask_rate,
    )
    policy.validate()
    return policy


def weak_view(x: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x + policy.weak_noise_sigma * rng.standard_normal(x.shape)


def strong_view(x: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    """Heavier noise, then a fixed fraction of coordinates zeroed."""
    x = np.asarray(x, dtype=np.float64)
    out = x + policy.strong_noise_sigma * rng.standard_normal(x.shape)
    k = int(round(policy.strong_mask_rate * x.shape[-1]))
    if k > 0:
        masked = rng.choice(x.shape[-1], size=k, replace=False)
        out[..., masked] = 0.0
    return out


def weak_view_batch(
    X: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator
) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X + policy.weak_noise_sigma * rng.standard_normal(X.shape)


def strong_view_batch(
    X: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator
) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = X + policy.strong_noise_sigma * rng.standard_normal(X.shape)
    k = int(round(policy.strong_mask_rate * X.shape[1]))
    if k > 0:
        # Per-row mask: the k smallest of a uniform draw picks coords uniformly.
        scores = rng.random(X.shape)
        masked = np.argsort(scores, axis=1)[:, :k]
        np.put_along_axis(out, masked, 0.0, axis=1)
    return out


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------


def _expected_header(feature_dim: int) -> list[str]:
    return [f"f{i}" for i in range(feature_dim)] + ["label"]


def load_csv(path: str | Path, role: str, num_classes: int, id_start: int = 0) -> list:
    """Parse one split CSV; row-level problems are rejected with the row number.

    The header must read ``f0,...,f{d-1},label``. For the unlabeled role the
    label column fills ``hidden_label``; for labeled/test it fills ``label``.
    """
    if role not in CSV_ROLES:
        raise ValueError(f"role must be one of {CSV_ROLES}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row required") from None
        if len(header) < 2 or header[-1] != "label":
            raise ValueError(f"{path}: header must be f0,...,f{{d-1}},label")
        feature_dim = len(header) - 1
        if header != _expected_header(feature_dim):
            raise ValueError(f"{path}: header must be f0,...,f{{d-1}},label")
        examples = []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != feature_dim + 1:
                raise ValueError(
                    f"{path}: row {row_num}: expected {feature_dim + 1} columns, got {len(row)}"
                )
            try:
                feats = np.array([float(v) for v in row[:-1]], dtype=np.float64)
            except ValueError:
                raise ValueError(
                    f"{path}: row {row_num}: non-numeric feature value"
                ) from None
            if not np.all(np.isfinite(feats)):
                raise ValueError(f"{path}: row {row_num}: non-finite feature value")
            try:
                label = int(row[-1])
            except ValueError:
                raise ValueError(
                    f"{path}: row {row_num}: label {row[-1]!r} is not an integer"
                ) from None
            if not 0 <= label < num_classes:
                raise ValueError(
                    f"{path}: row {row_num}: label {label} outside [0, {num_classes})"
                )
            sample_id = id_start + len(examples)
            if role == "unlabeled":
                examples.append(UnlabeledExample(sample_id, feats, hidden_label=label))
            else:
                examples.append(LabeledExample(sample_id, feats, label=label))
    return examples


def _write_csv(path: Path, features: np.ndarray, labels: np.ndarray) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_expected_header(features.shape[1]))
        for feats, label in zip(features, labels):
            writer.writerow([repr(float(v)) for v in feats] + [int(label)])


def save_splits(bundle: SplitBundle, out_dir: str | Path) -> dict[str, Path]:
    """Persist a bundle as one CSV per role plus a JSON sidecar with the spec."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "labeled": out_dir / "labeled.csv",
        "unlabeled": out_dir / "unlabeled.csv",
        "test": out_dir / "test.csv",
        "spec": out_dir / "dataset.json",
    }
    _write_csv(paths["labeled"], bundle.labeled.features, bundle.labeled.labels)
    _write_csv(paths["unlabeled"], bundle.unlabeled.features, bundle.unlabeled.hidden_labels)
    _write_csv(paths["test"], bundle.test.features, bundle.test.labels)
    paths["spec"].write_text(json.dumps(spec_to_dict(bundle.spec), indent=2, sort_keys=True))
    return paths


def load_splits(in_dir: str | Path) -> SplitBundle:
    """Rebuild a bundle from ``save_splits`` output (ids reassigned globally)."""
    in_dir = Path(in_dir)
    spec = spec_from_dict(json.loads((in_dir / "dataset.json").read_text()))
    c = spec.num_classes

    def to_arrays(examples: list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ids = np.array([e.id for e in examples], dtype=np.int64)
        feats = np.stack([e.features for e in examples]) if examples else np.zeros((0, spec.feature_dim))
        labels = np.array(
            [e.hidden_label if isinstance(e, UnlabeledExample) else e.label for e in examples],
            dtype=np.int64,
        )
        return ids, feats, labels

    lab = load_csv(in_dir / "labeled.csv", "labeled", c, id_start=0)
    unl = load_csv(in_dir / "unlabeled.csv", "unlabeled", c, id_start=len(lab))
    tst = load_csv(in_dir / "test.csv", "test", c, id_start=len(lab) + len(unl))
    li, lf, ll = to_arrays(lab)
    ui, uf, ul = to_arrays(unl)
    ti, tf, tl = to_arrays(tst)
    return SplitBundle(
        spec=spec,
        labeled=LabeledSplit(li, lf, ll),
        unlabeled=UnlabeledSplit(ui, uf, ul),
        test=LabeledSplit(ti, tf, tl),
    )


def spec_to_dict(spec: DatasetSpec) -> dict:
    out = {
        "num_classes": spec.num_classes,
        "feature_dim": spec.feature_dim,
        "n_max": spec.n_max,
        "m_max": spec.m_max,
        "gamma_l": spec.gamma_l,
        "gamma_u": spec.gamma_u,
        "labeled_shape": spec.labeled_shape,
        "unlabeled_shape": spec.unlabeled_shape,
        "test_per_class": spec.test_per_class,
        "mean_scale": spec.mean_scale,
        "cov_scale": spec.cov_scale,
        "class_means": None if spec.class_means is None else np.asarray(spec.class_means).tolist(),
        "arbitrary_mode": spec.arbitrary_mode,
        "seed": spec.seed,
    }
    return out


def spec_from_dict(data: dict) -> DatasetSpec:
    data = dict(data)
    if data.get("class_means") is not None:
        data["class_means"] = np.asarray(data["class_means"], dtype=np.float64)
    return DatasetSpec(**data)
