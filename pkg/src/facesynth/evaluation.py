"""Quantitative evaluation: oracle classifier, fake-attribute accuracy, sweep.

The oracle reuses the critic's hidden stack (same architecture except the
head: global average pooling into an m-way softmax) and is trained from
scratch with cross-entropy. Generated images pass through the same 8-bit
quantization as stored images before scoring so the oracle sees one domain.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from torch import nn

from .checkpoint import load_generator
from .data import DatasetManifest, load_batch, split_manifest
from .errors import ValidationError
from .model import critic_trunk, init_weights
from .validation import check_image_batch

DEFAULT_ORACLE_EPOCHS = 20


class ExpressionClassifier(BaseEstimator, ClassifierMixin):
    """Attribute classifier over single images, sklearn fit/predict style.

    X is a (n, 3, image_size, image_size) array in [-1, 1]; y holds integer
    class indices. Training is deterministic given ``seed``.
    """

    def __init__(self, image_size=32, base_channels=16, num_layers=3, leaky_slope=0.01,
                 lr=1e-4, epochs=DEFAULT_ORACLE_EPOCHS, batch_size=32, seed=0):
        self.image_size = image_size
        self.base_channels = base_channels
        self.num_layers = num_layers
        self.leaky_slope = leaky_slope
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def _build(self, num_classes):
        trunk = critic_trunk(3, self.base_channels, self.num_layers, self.leaky_slope)
        top = self.base_channels * (2 ** (self.num_layers - 1))
        net = nn.Sequential(trunk, nn.AdaptiveAvgPool2d(1), nn.Flatten(),
                            nn.Linear(top, num_classes))
        return init_weights(net, seed=self.seed)

    def fit(self, X, y):
        X = check_image_batch(X, "X", channels=3, size=self.image_size)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValidationError(f"y must have shape ({X.shape[0]},), got {tuple(y.shape)}")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValidationError("classifier needs at least two classes in y")
        class_index = {c: i for i, c in enumerate(self.classes_.tolist())}
        targets = torch.as_tensor([class_index[c] for c in y.tolist()], dtype=torch.long)

        net = self._build(len(self.classes_))
        optimizer = torch.optim.Adam(net.parameters(), lr=self.lr)
        n = X.shape[0]
        old_threads = torch.get_num_threads()
        torch.set_num_threads(1)
        try:
            net.train()
            for epoch in range(self.epochs):
                order = np.random.default_rng([self.seed, epoch, 0xC1]).permutation(n)
                for start in range(0, n, self.batch_size):
                    idx = order[start:start + self.batch_size]
                    logits = net(X[idx])
                    loss = F.cross_entropy(logits, targets[idx])
                    optimizer.zero_grad(set_to_none=True)
                    loss.backward()
                    optimizer.step()
        finally:
            torch.set_num_threads(old_threads)
        net.eval()
        self.net_ = net
        return self

    def _logits(self, X):
        if not hasattr(self, "net_"):
            raise NotFittedError("ExpressionClassifier is not fitted")
        X = check_image_batch(X, "X", channels=3, size=self.image_size)
        outs = []
        with torch.no_grad():
            for start in range(0, X.shape[0], 256):
                outs.append(self.net_(X[start:start + 256]))
        return torch.cat(outs)

    def predict(self, X):
        return self.classes_[self._logits(X).argmax(dim=1).numpy()]

    def predict_proba(self, X):
        return torch.softmax(self._logits(X), dim=1).numpy()


@dataclass
class OracleResult:
    classifier: ExpressionClassifier
    accuracy: float
    train_manifest: DatasetManifest
    test_manifest: DatasetManifest


def _class_indices(manifest: DatasetManifest):
    indices = []
    for entry in manifest.entries:
        if len(entry.labels) != 1:
            raise ValidationError(
                f"oracle protocol needs single-label entries; {entry.name!r} has {entry.labels}"
            )
        indices.append(manifest.vocabulary.index(entry.labels[0]))
    return np.asarray(indices)


def _oracle_run(manifest, seed, test_fraction, classifier_params, extra_images=None,
                extra_classes=None):
    params = dict(classifier_params or {})
    params.setdefault("seed", seed)
    classifier = ExpressionClassifier(**params)

    all_classes = set(_class_indices(manifest).tolist())
    if len(all_classes) < 2:
        raise ValidationError("manifest is degenerate: fewer than two attribute classes present")
    train_m, test_m = split_manifest(manifest, test_fraction, seed)
    train_y = _class_indices(train_m)
    missing = sorted(all_classes - set(train_y.tolist()))
    if missing:
        names = [manifest.vocabulary[i] for i in missing]
        raise ValidationError(f"classes absent from the training split: {names}")

    size = classifier.image_size
    train_X, _, _ = load_batch(train_m, range(len(train_m)), size)
    if extra_images is not None and len(extra_images):
        train_X = np.concatenate([train_X, np.asarray(extra_images, dtype=np.float32)])
        train_y = np.concatenate([train_y, np.asarray(extra_classes)])
    classifier.fit(train_X, train_y)

    test_X, _, _ = load_batch(test_m, range(len(test_m)), size)
    accuracy = float(classifier.score(test_X, _class_indices(test_m)))
    return OracleResult(classifier, accuracy, train_m, test_m)


def train_oracle_classifier(manifest: DatasetManifest, seed=0, test_fraction=0.1,
                            classifier_params=None):
    """Train the oracle on a 90/10 split; returns classifier + held-out accuracy."""
    return _oracle_run(manifest, seed, test_fraction, classifier_params)


def quantize_images(images):
    """Round float images through the 8-bit storage mapping and back."""
    arr = np.clip(np.rint((np.asarray(images, dtype=np.float64) + 1.0) * 127.5), 0, 255)
    return (arr / 127.5 - 1.0).astype(np.float32)


@dataclass
class FakeAccuracyResult:
    accuracy: float
    confusion: np.ndarray      # rows: target attribute, cols: oracle prediction
    num_scored: int


def _generate_translated(generator, images, sides, class_index, num_attributes, batch_size=64):
    outs = []
    onehot = np.zeros(num_attributes, dtype=np.float32)
    onehot[class_index] = 1.0
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            x = torch.from_numpy(images[start:start + batch_size])
            s = torch.from_numpy(sides[start:start + batch_size])
            y = torch.from_numpy(np.tile(onehot, (x.shape[0], 1)))
            outs.append(generator(x, s, y).image.numpy())
    return np.concatenate(outs)


def fake_attribute_accuracy(checkpoint_path, classifier: ExpressionClassifier,
                            test_manifest: DatasetManifest, batch_size=64):
    """Score how often the oracle recognizes the requested target attribute.

    Every test sample is translated to every attribute; a hit is an oracle
    prediction equal to the target. Returns accuracy plus the target-vs-
    prediction confusion matrix.
    """
    generator, vocabulary, _ = load_generator(checkpoint_path)
    if list(vocabulary) != list(test_manifest.vocabulary):
        raise ValidationError(
            f"checkpoint vocabulary {vocabulary} != manifest vocabulary {test_manifest.vocabulary}"
        )
    if generator.cfg.image_size != classifier.image_size:
        raise ValidationError(
            f"generator image_size {generator.cfg.image_size} != classifier image_size "
            f"{classifier.image_size}"
        )
    m = len(vocabulary)
    images, sides, _ = load_batch(test_manifest, range(len(test_manifest)),
                                  generator.cfg.image_size)
    confusion = np.zeros((m, m), dtype=np.int64)
    for target in range(m):
        fakes = _generate_translated(generator, images, sides, target, m, batch_size)
        preds = classifier.predict(quantize_images(fakes))
        for pred in preds:
            confusion[target, int(pred)] += 1
    total = int(confusion.sum())
    accuracy = float(np.trace(confusion)) / total
    return FakeAccuracyResult(accuracy=accuracy, confusion=confusion, num_scored=total)


def _sweep_point_seed(seed, count):
    return (seed * 1000003 + count) % (2 ** 31)


def augmentation_sweep(manifest: DatasetManifest, checkpoint_path, counts, seed=0,
                       test_fraction=0.1, classifier_params=None):
    """Accuracy of oracles trained on real + N-per-class synthetic images.

    For each count a fresh oracle is trained from scratch on the real
    training split plus ``count`` generated images per attribute class
    (random sources from the training split, balanced targets), and scored
    on the real held-out split. Count 0 reproduces the plain oracle run for
    the same derived seed exactly.
    """
    counts = list(counts)
    if counts != sorted(counts) or len(set(counts)) != len(counts):
        raise ValidationError(f"counts must be strictly ascending, got {counts}")
    generator = vocabulary = None
    curve = []
    for count in counts:
        point_seed = _sweep_point_seed(seed, count)
        extra_images = extra_classes = None
        if count > 0:
            if generator is None:
                generator, vocabulary, _ = load_generator(checkpoint_path)
                if list(vocabulary) != list(manifest.vocabulary):
                    raise ValidationError(
                        f"checkpoint vocabulary {vocabulary} != manifest vocabulary "
                        f"{manifest.vocabulary}"
                    )
            train_m, _ = split_manifest(manifest, test_fraction, point_seed)
            size = generator.cfg.image_size
            m = len(vocabulary)
            chunks, chunk_classes = [], []
            for target in range(m):
                rng = np.random.default_rng([point_seed, target, 0xA6])
                source_idx = rng.integers(0, len(train_m), size=count)
                images, sides, _ = load_batch(train_m, source_idx.tolist(), size)
                chunks.append(quantize_images(
                    _generate_translated(generator, images, sides, target, m)))
                chunk_classes.append(np.full(count, target))
            extra_images = np.concatenate(chunks)
            extra_classes = np.concatenate(chunk_classes)
        result = _oracle_run(manifest, point_seed, test_fraction, classifier_params,
                             extra_images, extra_classes)
        curve.append((count, result.accuracy))
    return curve


@dataclass
class EvalReport:
    """Serializable evaluation summary plus the accuracy-vs-count plot."""

    real_test_accuracy: float
    fake_attribute_accuracy: float
    per_class_confusion: list
    num_scored: int
    vocabulary: list
    augmentation_curve: list | None = None

    def to_json(self, path):
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")

    def plot_curve(self, path):
        if not self.augmentation_curve:
            raise ValidationError("no augmentation curve to plot")
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        counts = [c for c, _ in self.augmentation_curve]
        accs = [a for _, a in self.augmentation_curve]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(counts, accs, marker="o")
        ax.axhline(self.real_test_accuracy, linestyle="--", color="gray",
                   label="real-only oracle")
        ax.set_xlabel("synthetic images per class")
        ax.set_ylabel("expression recognition accuracy")
        ax.set_ylim(0.0, 1.02)
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        return Path(path)


def evaluate_model(manifest: DatasetManifest, checkpoint_path, out_dir, seed=0,
                   sweep_counts=None, test_fraction=0.1, classifier_params=None):
    """Full evaluation: oracle, fake-attribute accuracy, optional sweep + plot."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    oracle = train_oracle_classifier(manifest, seed, test_fraction, classifier_params)
    fake = fake_attribute_accuracy(checkpoint_path, oracle.classifier, oracle.test_manifest)
    curve = None
    if sweep_counts:
        curve = augmentation_sweep(manifest, checkpoint_path, sweep_counts, seed,
                                   test_fraction, classifier_params)
    report = EvalReport(
        real_test_accuracy=oracle.accuracy,
        fake_attribute_accuracy=fake.accuracy,
        per_class_confusion=fake.confusion.tolist(),
        num_scored=fake.num_scored,
        vocabulary=list(manifest.vocabulary),
        augmentation_curve=curve,
    )
    report.to_json(out_dir / "report.json")
    if curve:
        report.plot_curve(out_dir / "augmentation_curve.png")
    return report
