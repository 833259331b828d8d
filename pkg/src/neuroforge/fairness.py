"""Class-imbalance fairness protocol.

Ablate one class to a small sample count, measure per-class F1 under
stratified k-fold cross-validation with a deliberately simple linear
classifier, rebalance the minority class with generated samples, and measure
again. Synthetic samples only ever appear in training folds.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler

from .align import zscore_matrix
from .errors import (
    InvalidArgumentError,
    NumericalFailureError,
    StratificationError,
)
from .signal import PairedDataset, PairedSample
from .simulate import make_rng


@dataclass(frozen=True)
class ImbalanceSpec:
    """One imbalance scenario: who is ablated, how far, and the rebalance."""

    minority_class: str
    n_minority: int
    n_majority: int
    n_generated: int
    k_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_minority > self.n_majority:
            raise InvalidArgumentError(
                f"n_minority {self.n_minority} exceeds n_majority {self.n_majority}"
            )
        if self.n_minority + self.n_generated != self.n_majority:
            raise InvalidArgumentError(
                f"rebalancing identity violated: {self.n_minority} + "
                f"{self.n_generated} != {self.n_majority}"
            )
        if self.k_folds < 2:
            raise InvalidArgumentError(f"k_folds must be >= 2, got {self.k_folds}")


@dataclass(frozen=True)
class ClassifierConfig:
    """Linear multinomial classifier with a ridge penalty."""

    ridge_alpha: float = 1.0
    max_iter: int = 2000


@dataclass
class FairnessReport:
    """Per-class F1 before/after augmentation, with per-fold detail."""

    classes: tuple
    minority_class: str
    f1_before: dict = field(default_factory=dict)  # class -> (mean, std)
    f1_after: dict = field(default_factory=dict)
    folds_before: dict = field(default_factory=dict)  # class -> [per-fold]
    folds_after: dict = field(default_factory=dict)
    gap_before: float = float("nan")
    gap_after: float = float("nan")
    provenance: dict = field(default_factory=dict)

    def minority_delta(self) -> float:
        return self.f1_after[self.minority_class][0] - self.f1_before[self.minority_class][0]

    def to_jsonable(self) -> dict:
        return {
            "classes": list(self.classes),
            "minority_class": self.minority_class,
            "f1_before": {c: list(v) for c, v in self.f1_before.items()},
            "f1_after": {c: list(v) for c, v in self.f1_after.items()},
            "folds_before": self.folds_before,
            "folds_after": self.folds_after,
            "gap_before": self.gap_before,
            "gap_after": self.gap_after,
            "minority_delta": self.minority_delta(),
            "provenance": self.provenance,
        }

    def save(self, path) -> None:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        (root / "fairness.json").write_text(
            json.dumps(self.to_jsonable(), sort_keys=True, indent=2) + "\n", "utf-8"
        )
        with open(root / "fairness_folds.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["phase", "class", "fold", "f1"])
            for phase, folds in (("before", self.folds_before), ("after", self.folds_after)):
                for cls, values in folds.items():
                    for i, v in enumerate(values):
                        writer.writerow([phase, cls, i, f"{v:.6f}"])


# ---------------------------------------------------------------------------
# Dataset surgery
# ---------------------------------------------------------------------------


def _indices_by_class(dataset: PairedDataset, real_only=True):
    by_class = {}
    for i, s in enumerate(dataset.samples):
        if real_only and s.synthetic:
            continue
        by_class.setdefault(s.condition_label, []).append(i)
    return by_class


def make_imbalanced(dataset: PairedDataset, spec: ImbalanceSpec, rng) -> PairedDataset:
    """Subsample the minority class to n_minority; truncate others to n_majority."""
    by_class = _indices_by_class(dataset)
    if spec.minority_class not in by_class:
        raise InvalidArgumentError(
            f"minority class {spec.minority_class!r} absent from dataset "
            f"(classes: {sorted(by_class)})"
        )
    keep = []
    for cls in sorted(by_class):
        idx = by_class[cls]
        if cls == spec.minority_class:
            if len(idx) < spec.n_minority:
                raise InvalidArgumentError(
                    f"class {cls!r} has {len(idx)} samples, needs >= {spec.n_minority}"
                )
            chosen = rng.choice(len(idx), size=spec.n_minority, replace=False)
            keep.extend(idx[i] for i in sorted(chosen))
        else:
            if len(idx) < spec.n_majority:
                raise InvalidArgumentError(
                    f"class {cls!r} has {len(idx)} samples, needs >= {spec.n_majority}"
                )
            keep.extend(idx[: spec.n_majority])
    keep.sort()
    return PairedDataset(
        samples=tuple(dataset.samples[i] for i in keep), manifest=dict(dataset.manifest)
    )


def augment_minority(
    params, dataset: PairedDataset, spec: ImbalanceSpec, rng, schedule
) -> PairedDataset:
    """Append generated minority-class samples until the class is rebalanced.

    Conditioning uses bootstrap-resampled real minority source epochs; every
    appended sample carries the synthetic-provenance flag. Generation
    failures above 5% of the requested count abort.
    """
    import torch

    from .model.generate import generate_targets

    by_class = _indices_by_class(dataset)
    minority_idx = by_class.get(spec.minority_class, [])
    if not minority_idx:
        raise InvalidArgumentError(
            f"minority class {spec.minority_class!r} has no real samples to condition on"
        )
    if spec.n_generated == 0:
        return dataset
    picks = rng.choice(len(minority_idx), size=spec.n_generated, replace=True)
    epochs = [dataset.samples[minority_idx[i]].source_epoch for i in picks]
    gen_seed = int(rng.integers(0, 2**31 - 1))
    failures = 0
    generated = []
    try:
        generated = generate_targets(
            epochs, params, schedule, torch.Generator().manual_seed(gen_seed)
        )
    except NumericalFailureError:
        failures = len(epochs)
    if failures > 0.05 * spec.n_generated:
        raise NumericalFailureError(
            f"generation failed for {failures} of {spec.n_generated} requested samples"
        )
    new_samples = list(dataset.samples)
    for i, (epoch, target) in enumerate(zip(epochs, generated)):
        donor = dataset.samples[minority_idx[picks[i]]]
        new_samples.append(
            PairedSample(
                source_epoch=epoch,
                target_epoch=target,
                condition_label=spec.minority_class,
                subject_id=donor.subject_id,
                group_id=donor.group_id,
                synthetic=True,
            )
        )
    return PairedDataset(samples=tuple(new_samples), manifest=dict(dataset.manifest))


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def epoch_features(sample: PairedSample) -> np.ndarray:
    """Pooled target-epoch features: per-channel mean, std, and split-band power.

    Computed on the matrix-standardized epoch so real and generated samples
    live on one scale; per-channel structure (the class signature) survives.
    """
    z = zscore_matrix(sample.target_epoch.data)
    mean = z.mean(axis=1)
    std = z.std(axis=1)
    spec = np.abs(np.fft.rfft(z - z.mean(axis=1, keepdims=True), axis=1)) ** 2
    half = max(1, spec.shape[1] // 2)
    low = spec[:, :half].sum(axis=1)
    high = spec[:, half:].sum(axis=1)
    total = low + high
    total = np.where(total == 0.0, 1.0, total)
    return np.concatenate([mean, std, low / total, high / total])


def _stratified_folds(labels, k, rng):
    """Round-robin class-stratified folds; every fold sees every class."""
    labels = np.asarray(labels)
    folds = [[] for _ in range(k)]
    for cls in sorted(set(labels)):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise StratificationError(
                f"class {cls!r} has {idx.size} real samples, fewer than k={k} folds"
            )
        idx = idx[rng.permutation(idx.size)]
        for j, i in enumerate(idx):
            folds[j % k].append(int(i))
    return [sorted(f) for f in folds]


def _per_class_f1(y_true, y_pred, classes):
    out = {}
    for cls in classes:
        tp = np.sum((y_pred == cls) & (y_true == cls))
        fp = np.sum((y_pred == cls) & (y_true != cls))
        fn = np.sum((y_pred != cls) & (y_true == cls))
        denom = 2 * tp + fp + fn
        out[cls] = float(2 * tp / denom) if denom > 0 else 0.0
    return out


def kfold_f1(
    dataset: PairedDataset,
    k,
    classifier_config: ClassifierConfig,
    rng,
) -> dict:
    """Stratified k-fold per-class F1 of a ridge-penalized linear classifier.

    Folds are built over real samples only; synthetic samples join every
    training fold and never appear in validation. Returns
    ``{"classes", "per_class": {class: (mean, std)}, "folds": {class: [...]}}``.
    """
    labels_all = np.asarray([s.condition_label for s in dataset.samples])
    real_idx = np.asarray([i for i, s in enumerate(dataset.samples) if not s.synthetic])
    synth_idx = np.asarray(
        [i for i, s in enumerate(dataset.samples) if s.synthetic], dtype=int
    )
    classes = sorted(set(labels_all[real_idx]))
    folds = _stratified_folds(labels_all[real_idx], k, rng)
    features = np.stack([epoch_features(s) for s in dataset.samples])
    per_fold = {cls: [] for cls in classes}
    for fold in folds:
        val_idx = real_idx[np.asarray(fold)]
        train_mask = np.ones(len(dataset.samples), dtype=bool)
        train_mask[val_idx] = False
        train_idx = np.flatnonzero(train_mask)
        scaler = StandardScaler().fit(features[train_idx])
        clf = LogisticRegression(
            C=1.0 / classifier_config.ridge_alpha,
            max_iter=classifier_config.max_iter,
        )
        clf.fit(scaler.transform(features[train_idx]), labels_all[train_idx])
        pred = clf.predict(scaler.transform(features[val_idx]))
        scores = _per_class_f1(labels_all[val_idx], pred, classes)
        for cls in classes:
            per_fold[cls].append(scores[cls])
    assert synth_idx.size == 0 or not np.isin(synth_idx, np.concatenate(
        [real_idx[np.asarray(f)] for f in folds]
    )).any()
    per_class = {
        cls: (float(np.mean(v)), float(np.std(v))) for cls, v in per_fold.items()
    }
    return {"classes": tuple(classes), "per_class": per_class, "folds": per_fold}


def fairness_experiment(
    dataset: PairedDataset,
    params,
    spec: ImbalanceSpec,
    schedule,
    classifier_config: ClassifierConfig | None = None,
) -> FairnessReport:
    """Full protocol: ablate, score, rebalance with generation, score again."""
    classifier_config = classifier_config or ClassifierConfig()
    imbalanced = make_imbalanced(dataset, spec, make_rng(spec.seed, 1))
    before = kfold_f1(imbalanced, spec.k_folds, classifier_config, make_rng(spec.seed, 2))
    augmented = augment_minority(params, imbalanced, spec, make_rng(spec.seed, 3), schedule)
    after = kfold_f1(augmented, spec.k_folds, classifier_config, make_rng(spec.seed, 2))
    classes = before["classes"]

    def gap(per_class):
        means = [per_class[c][0] for c in classes]
        return float(max(means) - min(means))

    return FairnessReport(
        classes=classes,
        minority_class=spec.minority_class,
        f1_before=before["per_class"],
        f1_after=after["per_class"],
        folds_before=before["folds"],
        folds_after=after["folds"],
        gap_before=gap(before["per_class"]),
        gap_after=gap(after["per_class"]),
        provenance={
            "spec": {
                "minority_class": spec.minority_class,
                "n_minority": spec.n_minority,
                "n_majority": spec.n_majority,
                "n_generated": spec.n_generated,
                "k_folds": spec.k_folds,
                "seed": spec.seed,
            },
            "conditioning": "bootstrap-resampled real minority source epochs",
        },
    )
