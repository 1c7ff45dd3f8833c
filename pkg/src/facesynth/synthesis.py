"""Inference entry points: attribute-transfer grids and realism refinement.

Outputs are written as 8-bit PNGs using the exact mapping
``uint8 = clip(rint((v + 1) * 127.5), 0, 255)`` applied to the Tanh heads.
Grids are row-major with a fixed 2-pixel black separator between cells, so a
repeated request produces byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .checkpoint import load_generator
from .data import HeatmapSpec, encode_attributes, load_image, read_landmarks, render_heatmap
from .errors import ValidationError

GRID_SEPARATOR = 2


@dataclass(frozen=True)
class SynthesisRequest:
    checkpoint_path: Path
    input_image_path: Path
    landmark_path: Path
    output_path: Path
    target_attributes: object = "all"   # "all" or a sequence of attribute names


@dataclass(frozen=True)
class RefinementRequest:
    checkpoint_path: Path
    synthetic_frontal_path: Path
    real_side_image_path: Path
    output_path: Path
    target_attribute: str | None = None


def to_uint8(image):
    """[-1, 1] float image (3, h, w) -> (h, w, 3) uint8 via rint((v+1)*127.5)."""
    arr = np.asarray(image, dtype=np.float64)
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def assemble_grid(cells, separator=GRID_SEPARATOR):
    """Concatenate uint8 (h, w, 3) cells into one row with black separators."""
    if not cells:
        raise ValidationError("grid needs at least one cell")
    h = cells[0].shape[0]
    gap = np.zeros((h, separator, 3), dtype=np.uint8)
    parts = []
    for i, cell in enumerate(cells):
        if i:
            parts.append(gap)
        parts.append(cell)
    return np.concatenate(parts, axis=1)


def _heatmap_spec_from_meta(meta, image_size):
    sigma = meta.get("config", {}).get("heatmap_sigma")
    return HeatmapSpec(sigma=sigma) if sigma else HeatmapSpec.for_size(image_size)


def _resolve_attributes(requested, vocabulary):
    if requested == "all" or requested is None:
        return list(vocabulary)
    names = list(requested)
    for name in names:
        if name not in vocabulary:
            raise ValidationError(
                f"attribute {name!r} not in checkpoint vocabulary {vocabulary}"
            )
    return names


def synthesize_grid(request: SynthesisRequest):
    """Write an attribute-transfer grid: input column, then one per attribute.

    A JSON sidecar (same stem, .json) records the mean absolute difference of
    every column to the input, so own-attribute reconstruction quality is
    visible without reloading the images.
    """
    generator, vocabulary, meta = load_generator(request.checkpoint_path)
    size = generator.cfg.image_size
    names = _resolve_attributes(request.target_attributes, vocabulary)

    image, _ = load_image(request.input_image_path, size)
    landmarks = read_landmarks(request.landmark_path)
    side = render_heatmap(landmarks, size, _heatmap_spec_from_meta(meta, size))

    x = torch.from_numpy(image).unsqueeze(0)
    s = torch.from_numpy(side).unsqueeze(0)
    attrs = np.stack([encode_attributes([name], vocabulary) for name in names])
    with torch.no_grad():
        out = generator(x.expand(len(names), -1, -1, -1),
                        s.expand(len(names), -1, -1, -1),
                        torch.from_numpy(attrs))

    cells = [to_uint8(image)]
    diffs = {}
    for i, name in enumerate(names):
        column = out.image[i].numpy()
        diffs[name] = float(np.abs(column - image).mean())
        cells.append(to_uint8(column))

    out_path = Path(request.output_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(assemble_grid(cells)).save(out_path)
    sidecar = {"input": str(request.input_image_path), "attributes": names,
               "mean_abs_diff_to_input": diffs}
    out_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return out_path


def refine(request: RefinementRequest):
    """Refine a synthetic frontal image using a real image as the side input.

    The real photograph rides in the side slot of the unchanged 6-channel
    interface (no heatmap is rendered). With ``target_attribute`` set,
    refinement and attribute transfer happen in one pass; without it the
    all-zero attribute vector is used. Returns (output path, metadata dict).
    """
    generator, vocabulary, meta = load_generator(request.checkpoint_path)
    size = generator.cfg.image_size

    frontal, _ = load_image(request.synthetic_frontal_path, size)
    side, _ = load_image(request.real_side_image_path, size)
    if request.target_attribute is not None:
        attrs = encode_attributes([request.target_attribute], vocabulary)
    else:
        attrs = np.zeros(len(vocabulary), dtype=np.float32)

    with torch.no_grad():
        out = generator(torch.from_numpy(frontal).unsqueeze(0),
                        torch.from_numpy(side).unsqueeze(0),
                        torch.from_numpy(attrs).unsqueeze(0))
    refined = out.image[0].numpy()

    out_path = Path(request.output_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(refined)).save(out_path)
    metadata = {
        "checkpoint": str(request.checkpoint_path),
        "synthetic_frontal": str(request.synthetic_frontal_path),
        "real_side_image": str(request.real_side_image_path),
        "target_attribute": request.target_attribute,
        "image_size": size,
    }
    out_path.with_suffix(".json").write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")
    return out_path, metadata


def palette_distance(image, reference, max_colors=4096):
    """Mean distance from each image pixel to the nearest reference color.

    Both inputs are (3, h, w) floats in [-1, 1]; the reference palette is the
    set of its pixel colors (subsampled beyond ``max_colors``). Used to check
    the texture-transfer direction of refinement.
    """
    pix = np.asarray(image, dtype=np.float64).reshape(3, -1).T
    ref = np.asarray(reference, dtype=np.float64).reshape(3, -1).T
    ref = np.unique(ref, axis=0)
    if ref.shape[0] > max_colors:
        step = int(np.ceil(ref.shape[0] / max_colors))
        ref = ref[::step]
    d2 = ((pix[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.min(axis=1)).mean())
