"""Dataset ingestion, landmark heatmaps, attribute encoding, and toy data.

Dataset directory layout::

    <root>/images/<name>.png       8-bit RGB images
    <root>/landmarks/<name>.txt    one landmark per line, "x y" in pixel
                                   coordinates of the original image
    <root>/sides/<name>.png        optional: raw side image replacing the
                                   rendered heatmap (refinement datasets)
    <root>/labels.tsv              <name> TAB <attr> [TAB <attr> ...]
    <root>/vocabulary.txt          one attribute per line; defines the
                                   one-hot order

Every entry needs either a landmark file (side input = rendered Gaussian
heatmap) or a side image (side input = the image itself), never both.
Images and heatmaps are mapped to [-1, 1]; landmark coordinates scale with
resizes.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IngestionError, ValidationError

TOY_ATTRIBUTES = ("neutral", "happy", "sad", "surprised")


class EmptyLandmarkWarning(UserWarning):
    """Raised as a warning when a heatmap is rendered from zero landmarks."""


@dataclass(frozen=True)
class HeatmapSpec:
    """Gaussian landmark heatmap parameters.

    ``sigma`` defaults to 2 px at 128x128 and scales as image_size/64; the
    field amplitude is fixed at 1 and the background maps to -1.
    """

    sigma: float = 2.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError(f"heatmap sigma must be > 0, got {self.sigma}")

    @classmethod
    def for_size(cls, image_size):
        return cls(sigma=image_size / 64.0)


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    image_path: Path
    labels: tuple
    landmark_path: Path | None = None
    side_image_path: Path | None = None


@dataclass
class DatasetManifest:
    """Parsed dataset index: entries plus the attribute vocabulary (one-hot order)."""

    entries: list
    vocabulary: list

    def __len__(self):
        return len(self.entries)

    @property
    def num_attributes(self):
        return len(self.vocabulary)


def clamp_landmarks(landmarks, size):
    """Clamp landmark coordinates into the frame; returns (clamped, n_clamped)."""
    pts = np.asarray(landmarks, dtype=np.float64).reshape(-1, 2)
    clamped = np.clip(pts, 0.0, size - 1.0)
    return clamped, int((clamped != pts).any(axis=1).sum())


def render_heatmap(landmarks, size, spec: HeatmapSpec | None = None):
    """Render the landmark set as a 3-channel Gaussian heatmap in [-1, 1].

    The single-channel field is max_k exp(-||p - l_k||^2 / (2 sigma^2)) over
    the integer pixel grid, mapped to [-1, 1] via 2H - 1 and replicated to
    three channels. Out-of-frame landmarks are clamped to the frame; an empty
    landmark set yields the all-background map and an EmptyLandmarkWarning.
    """
    spec = spec or HeatmapSpec.for_size(size)
    pts = np.asarray(landmarks, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        warnings.warn("rendering heatmap from an empty landmark set", EmptyLandmarkWarning)
        return np.full((3, size, size), -1.0, dtype=np.float32)
    pts, _ = clamp_landmarks(pts, size)
    cols = np.arange(size, dtype=np.float64)
    rows = np.arange(size, dtype=np.float64)
    # squared distances per landmark, separable in x and y
    dx2 = (cols[None, :] - pts[:, 0:1]) ** 2          # (K, size)
    dy2 = (rows[None, :] - pts[:, 1:2]) ** 2
    d2 = dy2[:, :, None] + dx2[:, None, :]            # (K, size, size)
    fields = np.exp(-d2 / (2.0 * spec.sigma ** 2))
    heat = 2.0 * fields.max(axis=0) - 1.0
    return np.repeat(heat[None, :, :].astype(np.float32), 3, axis=0)


def encode_attributes(labels, vocabulary):
    """One-hot/multi-hot encode attribute names in vocabulary order."""
    vec = np.zeros(len(vocabulary), dtype=np.float32)
    index = {name: i for i, name in enumerate(vocabulary)}
    for label in labels:
        if label not in index:
            raise ValidationError(f"unknown attribute label {label!r}; vocabulary is {list(vocabulary)}")
        vec[index[label]] = 1.0
    return vec


def sample_target_attributes(batch_labels, rng):
    """Permute the batch's own label vectors uniformly at random.

    Every sample receives some real label combination as its target, so the
    target multiset always equals the source multiset.
    """
    batch_labels = np.asarray(batch_labels)
    if batch_labels.shape[0] == 0:
        raise ValidationError("cannot sample target attributes from an empty batch")
    return batch_labels[rng.permutation(batch_labels.shape[0])].copy()


def augment_flip(images, sides, landmarks=None, rng=None, force=None):
    """Mirror image/side pairs horizontally with probability 0.5 per sample.

    The flip decision is shared by the image, the side input, and the
    landmark x-coordinates (mapped to width-1-x). ``force`` overrides the
    coin flips (scalar or per-sample booleans). Accepts single samples
    (3, h, w) or batches (n, 3, h, w); returns copies.
    """
    images = np.asarray(images)
    sides = np.asarray(sides)
    single = images.ndim == 3
    if single:
        images, sides = images[None], sides[None]
        if landmarks is not None:
            landmarks = np.asarray(landmarks)[None]
    n, width = images.shape[0], images.shape[-1]
    if force is not None:
        flips = np.broadcast_to(np.asarray(force, dtype=bool), (n,)).copy()
    else:
        if rng is None:
            raise ValidationError("augment_flip needs either rng or force")
        flips = rng.random(n) < 0.5
    images = images.copy()
    sides = sides.copy()
    images[flips] = images[flips, :, :, ::-1]
    sides[flips] = sides[flips, :, :, ::-1]
    out_landmarks = None
    if landmarks is not None:
        out_landmarks = np.asarray(landmarks, dtype=np.float64).copy()
        out_landmarks[flips, :, 0] = (width - 1.0) - out_landmarks[flips, :, 0]
    if single:
        images, sides = images[0], sides[0]
        out_landmarks = None if out_landmarks is None else out_landmarks[0]
    return images, sides, out_landmarks


def image_to_unit_range(pixels):
    """uint8 pixels -> float32 in [-1, 1] (255 -> 1.0, 0 -> -1.0)."""
    return pixels.astype(np.float32) / 127.5 - 1.0


def load_image(path, image_size):
    """Read an RGB image as (3, h, w) float32 in [-1, 1], resized if needed.

    Returns (array, original (width, height)) so landmark coordinates can be
    rescaled to match.
    """
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            orig = img.size
            if img.size != (image_size, image_size):
                img = img.resize((image_size, image_size), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read image {path}: {exc}") from exc
    return image_to_unit_range(arr).transpose(2, 0, 1), orig


def read_landmarks(path):
    """Parse a landmark file: one "x y" pair per line."""
    try:
        text = Path(path).read_text().strip()
    except OSError as exc:
        raise IngestionError(f"cannot read landmark file {path}: {exc}") from exc
    points = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise IngestionError(f"{path}:{lineno}: expected 'x y', got {line!r}")
        points.append((float(parts[0]), float(parts[1])))
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


def write_landmarks(path, landmarks):
    lines = [f"{x:.4f} {y:.4f}" for x, y in np.asarray(landmarks).reshape(-1, 2)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(root):
    """Read the dataset directory layout into a DatasetManifest."""
    root = Path(root)
    vocab_path = root / "vocabulary.txt"
    labels_path = root / "labels.tsv"
    for required in (vocab_path, labels_path):
        if not required.exists():
            raise IngestionError(f"missing dataset file {required}")
    vocabulary = [line.strip() for line in vocab_path.read_text().splitlines() if line.strip()]
    if len(set(vocabulary)) != len(vocabulary) or not vocabulary:
        raise IngestionError(f"{vocab_path}: vocabulary must be a non-empty list of unique names")

    entries = []
    for lineno, line in enumerate(labels_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\n").split("\t")
        name, labels = fields[0], tuple(fields[1:])
        for label in labels:
            if label not in vocabulary:
                raise IngestionError(f"{labels_path}:{lineno}: label {label!r} not in vocabulary")
        image_path = root / "images" / f"{name}.png"
        landmark_path = root / "landmarks" / f"{name}.txt"
        side_path = root / "sides" / f"{name}.png"
        if not image_path.exists():
            raise IngestionError(f"missing image for entry {name!r}: {image_path}")
        has_lm, has_side = landmark_path.exists(), side_path.exists()
        if has_lm == has_side:
            raise IngestionError(
                f"entry {name!r} needs exactly one of a landmark file or a side image, "
                f"found landmarks={has_lm} side={has_side}"
            )
        entries.append(ManifestEntry(
            name=name, image_path=image_path, labels=labels,
            landmark_path=landmark_path if has_lm else None,
            side_image_path=side_path if has_side else None,
        ))
    if not entries:
        raise IngestionError(f"{labels_path}: no entries")
    return DatasetManifest(entries=entries, vocabulary=vocabulary)


def load_batch(manifest: DatasetManifest, indices, image_size, spec: HeatmapSpec | None = None):
    """Load (images, sides, label vectors) for the given entry indices.

    Deterministic: no randomness is consumed. Side inputs come from rendered
    landmark heatmaps or, for refinement-style entries, from the raw side
    image. Landmarks are rescaled when the image is resized; out-of-frame
    landmarks are clamped with one warning per affected file.
    """
    spec = spec or HeatmapSpec.for_size(image_size)
    images, sides, labels = [], [], []
    for i in indices:
        try:
            entry = manifest.entries[i]
        except IndexError:
            raise ValidationError(f"batch index {i} out of range for manifest of {len(manifest)}")
        img, orig_size = load_image(entry.image_path, image_size)
        if entry.landmark_path is not None:
            pts = read_landmarks(entry.landmark_path)
            pts = pts * np.array([image_size / orig_size[0], image_size / orig_size[1]])
            _, n_clamped = clamp_landmarks(pts, image_size)
            if n_clamped:
                warnings.warn(
                    f"{entry.landmark_path}: clamped {n_clamped} out-of-frame landmark(s)"
                )
            side = render_heatmap(pts, image_size, spec)
        else:
            side, _ = load_image(entry.side_image_path, image_size)
        images.append(img)
        sides.append(side)
        labels.append(encode_attributes(entry.labels, manifest.vocabulary))
    return (np.stack(images).astype(np.float32),
            np.stack(sides).astype(np.float32),
            np.stack(labels).astype(np.float32))


def split_manifest(manifest: DatasetManifest, test_fraction, seed):
    """Deterministic train/test split of manifest entries."""
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng([seed, 0x51])
    order = rng.permutation(len(manifest))
    n_test = max(1, int(round(len(manifest) * test_fraction)))
    test_idx = sorted(order[:n_test].tolist())
    train_idx = sorted(order[n_test:].tolist())
    train = DatasetManifest([manifest.entries[i] for i in train_idx], list(manifest.vocabulary))
    test = DatasetManifest([manifest.entries[i] for i in test_idx], list(manifest.vocabulary))
    return train, test


# ---------------------------------------------------------------------------
# Procedural toy faces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _FaceGeometry:
    center: tuple          # (cx, cy) in pixels
    axes: tuple            # (ax, ay) ellipse semi-axes
    head_color: tuple      # RGB uint8
    attribute: str
    mouth_depth: float
    background: int = 32
    feature_value: int = 20


def _sample_face(rng, size, vocabulary):
    cx = size / 2 + rng.uniform(-size / 16, size / 16)
    cy = size / 2 + rng.uniform(-size / 16, size / 16)
    ax = size * rng.uniform(0.30, 0.38)
    ay = size * rng.uniform(0.34, 0.42)
    # saturated head color so the grayscale twin is visibly different
    channels = rng.permutation(3)
    color = np.empty(3)
    color[channels[0]] = rng.uniform(170, 235)
    color[channels[1]] = rng.uniform(90, 160)
    color[channels[2]] = rng.uniform(40, 100)
    attribute = vocabulary[int(rng.integers(len(vocabulary)))]
    depth = max(2.0, 0.14 * ay) * rng.uniform(0.9, 1.15)
    return _FaceGeometry((cx, cy), (ax, ay), tuple(color.round().astype(int)), attribute, depth)


def _face_landmarks(geo: _FaceGeometry):
    """Five landmarks: two eyes, two mouth corners, mouth center (x, y)."""
    (cx, cy), (ax, ay) = geo.center, geo.axes
    eye_y = cy - 0.35 * ay
    eye_dx = 0.45 * ax
    mouth_y = cy + 0.45 * ay
    mouth_dx = 0.45 * ax
    if geo.attribute == "happy":
        center = (cx, mouth_y + geo.mouth_depth)
    elif geo.attribute == "sad":
        center = (cx, mouth_y - geo.mouth_depth)
    else:
        center = (cx, mouth_y)
    if geo.attribute == "surprised":
        mouth_dx = max(2.0, 0.10 * ay) * 1.2
    return np.array([
        (cx - eye_dx, eye_y), (cx + eye_dx, eye_y),
        (cx - mouth_dx, mouth_y), (cx + mouth_dx, mouth_y),
        center,
    ])


def _render_face(geo: _FaceGeometry, size, grayscale=False):
    """Rasterize the face analytically; returns uint8 (size, size, 3)."""
    (cx, cy), (ax, ay) = geo.center, geo.axes
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.full((size, size, 3), geo.background, dtype=np.float64)

    head = ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2 <= 1.0
    if grayscale:
        gray = float(np.mean(geo.head_color))
        img[head] = gray
    else:
        img[head] = geo.head_color

    landmarks = _face_landmarks(geo)
    eye_r = max(1.2, size * 0.05)
    for ex, ey in landmarks[:2]:
        img[(xs - ex) ** 2 + (ys - ey) ** 2 <= eye_r ** 2] = geo.feature_value

    lx, rx = landmarks[2, 0], landmarks[3, 0]
    mouth_y = landmarks[2, 1]
    thickness = max(0.8, size / 40.0)
    if geo.attribute == "surprised":
        mcx, mcy = landmarks[4]
        radius = max(2.0, 0.10 * ay)
        img[(xs - mcx) ** 2 + (ys - mcy) ** 2 <= radius ** 2] = geo.feature_value
    else:
        # parabola through the two corners and the (possibly offset) center
        t = np.linspace(0.0, 1.0, 128)
        px = lx + (rx - lx) * t
        offset = landmarks[4, 1] - mouth_y
        py = mouth_y + offset * 4.0 * t * (1.0 - t)
        d2 = (xs[:, :, None] - px[None, None, :]) ** 2 + (ys[:, :, None] - py[None, None, :]) ** 2
        img[d2.min(axis=2) <= thickness ** 2] = geo.feature_value

    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _write_dataset(out_dir, names, images_by_dir, landmarks, labels, vocabulary):
    out_dir = Path(out_dir)
    for sub, images in images_by_dir.items():
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
        for name, arr in zip(names, images):
            Image.fromarray(arr).save(out_dir / sub / f"{name}.png")
    if landmarks is not None:
        (out_dir / "landmarks").mkdir(parents=True, exist_ok=True)
        for name, pts in zip(names, landmarks):
            write_landmarks(out_dir / "landmarks" / f"{name}.txt", pts)
    (out_dir / "labels.tsv").write_text(
        "".join(f"{name}\t{label}\n" for name, label in zip(names, labels))
    )
    (out_dir / "vocabulary.txt").write_text("".join(f"{v}\n" for v in vocabulary))


def generate_toy_dataset(out_dir, num_samples, num_attributes=4, image_size=32, seed=0):
    """Write a procedural toy-face dataset and return its manifest.

    Each sample draws a random elliptical head (identity: color, size,
    offset), two eyes, and a mouth whose curvature encodes the attribute:
    flat (neutral), downward-bowed arc (happy: mouth center strictly below
    the corners), upward-bowed arc (sad: strictly above), or an open circle
    (surprised). Five landmarks per face: eyes, mouth corners, mouth center.
    Deterministic given the seed.
    """
    if not 1 <= num_attributes <= len(TOY_ATTRIBUTES):
        raise ValidationError(
            f"num_attributes must be in [1, {len(TOY_ATTRIBUTES)}], got {num_attributes}"
        )
    vocabulary = list(TOY_ATTRIBUTES[:num_attributes])
    rng = np.random.default_rng(seed)
    names, images, landmarks, labels = [], [], [], []
    for i in range(num_samples):
        geo = _sample_face(rng, image_size, vocabulary)
        names.append(f"face_{i:05d}")
        images.append(_render_face(geo, image_size))
        landmarks.append(_face_landmarks(geo))
        labels.append(geo.attribute)
    _write_dataset(out_dir, names, {"images": images}, landmarks, labels, vocabulary)
    return load_manifest(out_dir)


def generate_toy_refinement_dataset(out_dir, num_samples, num_attributes=4, image_size=32, seed=0):
    """Write a toy refinement dataset: gray synthetic frontal + colored real pair.

    Each entry renders the same face geometry twice: a flat gray-shaded
    version under images/ (the synthetic frontal input) and the colored
    version under sides/ (the unlabeled real image providing texture).
    """
    if not 1 <= num_attributes <= len(TOY_ATTRIBUTES):
        raise ValidationError(
            f"num_attributes must be in [1, {len(TOY_ATTRIBUTES)}], got {num_attributes}"
        )
    vocabulary = list(TOY_ATTRIBUTES[:num_attributes])
    rng = np.random.default_rng(seed)
    names, gray_images, color_images, labels = [], [], [], []
    for i in range(num_samples):
        geo = _sample_face(rng, image_size, vocabulary)
        names.append(f"pair_{i:05d}")
        gray_images.append(_render_face(geo, image_size, grayscale=True))
        color_images.append(_render_face(geo, image_size, grayscale=False))
        labels.append(geo.attribute)
    _write_dataset(out_dir, names, {"images": gray_images, "sides": color_images},
                   None, labels, vocabulary)
    return load_manifest(out_dir)


def dataset_checksum(root):
    """SHA-256 over all dataset files (sorted), for determinism checks."""
    digest = hashlib.sha256()
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            digest.update(path.relative_to(root).as_posix().encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()
