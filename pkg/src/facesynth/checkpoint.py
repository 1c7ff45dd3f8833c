"""Checkpoint archives: one .npz file holding a documented key->array mapping.

Key schema (exact names):

    param/generator/<parameter name>        model weights, float32
    param/discriminator/<parameter name>
    adam/generator/<parameter name>/exp_avg         optimizer first moment
    adam/generator/<parameter name>/exp_avg_sq      optimizer second moment
    adam/generator/<parameter name>/step            per-parameter step count
    adam/discriminator/...                          same three keys
    meta/config_json     JSON: full train config snapshot + attribute vocabulary
    meta/rng_json        JSON: numpy bit-generator state of the training stream
    meta/step            scalar: total optimizer updates so far
    meta/epoch           scalar: completed epochs
    meta/d_steps         scalar: discriminator updates
    meta/g_steps         scalar: generator updates
    meta/batch_pos       scalar: batches consumed within the current epoch

Parameter names are the dotted module paths reported by
``named_parameters()`` (for example ``encoder.0.weight``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .model import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig

_COUNTERS = ("step", "epoch", "d_steps", "g_steps", "batch_pos")


def _optimizer_arrays(prefix, model, optimizer):
    """Flatten Adam state into named arrays, aligned by parameter identity."""
    arrays = {}
    state = optimizer.state
    for name, param in model.named_parameters():
        if param not in state:
            continue
        entry = state[param]
        arrays[f"adam/{prefix}/{name}/exp_avg"] = entry["exp_avg"].detach().cpu().numpy()
        arrays[f"adam/{prefix}/{name}/exp_avg_sq"] = entry["exp_avg_sq"].detach().cpu().numpy()
        arrays[f"adam/{prefix}/{name}/step"] = np.asarray(float(entry["step"]))
    return arrays


def save_checkpoint(path, generator, discriminator, meta, opt_g=None, opt_d=None,
                    counters=None, rng_state=None):
    """Write the archive; ``meta`` must be a JSON-serializable config snapshot."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, param in generator.named_parameters():
        arrays[f"param/generator/{name}"] = param.detach().cpu().numpy()
    for name, param in discriminator.named_parameters():
        arrays[f"param/discriminator/{name}"] = param.detach().cpu().numpy()
    if opt_g is not None:
        arrays.update(_optimizer_arrays("generator", generator, opt_g))
    if opt_d is not None:
        arrays.update(_optimizer_arrays("discriminator", discriminator, opt_d))
    arrays["meta/config_json"] = np.asarray(json.dumps(meta, sort_keys=True, default=int))
    if rng_state is not None:
        arrays["meta/rng_json"] = np.asarray(json.dumps(rng_state, sort_keys=True, default=int))
    for key in _COUNTERS:
        arrays[f"meta/{key}"] = np.asarray(int((counters or {}).get(key, 0)))
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)
    return path


@dataclass
class CheckpointData:
    """Loaded archive contents before model reconstruction."""

    params: dict         # "generator"/"discriminator" -> {name: array}
    adam: dict           # same nesting, name -> {exp_avg, exp_avg_sq, step}
    meta: dict
    rng_state: dict | None
    counters: dict


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint file not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {key: npz[key] for key in npz.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "meta/config_json" not in arrays:
        raise CheckpointError(f"{path} is missing meta/config_json; not a facesynth checkpoint")

    params = {"generator": {}, "discriminator": {}}
    adam = {"generator": {}, "discriminator": {}}
    for key, value in arrays.items():
        parts = key.split("/")
        if parts[0] == "param":
            params[parts[1]]["/".join(parts[2:])] = value
        elif parts[0] == "adam":
            adam[parts[1]].setdefault("/".join(parts[2:-1]), {})[parts[-1]] = value
    meta = json.loads(str(arrays["meta/config_json"][()]))
    rng_state = None
    if "meta/rng_json" in arrays:
        rng_state = json.loads(str(arrays["meta/rng_json"][()]))
    counters = {key: int(arrays[f"meta/{key}"][()]) for key in _COUNTERS if f"meta/{key}" in arrays}
    return CheckpointData(params=params, adam=adam, meta=meta, rng_state=rng_state, counters=counters)


def _load_state(model, arrays, label):
    state = {name: torch.from_numpy(np.ascontiguousarray(arr)) for name, arr in arrays.items()}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{label} parameters do not match the config snapshot: {exc}") from exc
    return model


def build_from_checkpoint(data: CheckpointData, load_discriminator=True):
    """Reconstruct the generator (and optionally discriminator) from an archive."""
    try:
        gen_cfg = GeneratorConfig(**data.meta["config"]["generator"])
        disc_cfg = DiscriminatorConfig(**data.meta["config"]["discriminator"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint config snapshot is incomplete: {exc}") from exc
    generator = _load_state(Generator(gen_cfg), data.params["generator"], "generator")
    discriminator = None
    if load_discriminator:
        discriminator = _load_state(Discriminator(disc_cfg), data.params["discriminator"],
                                    "discriminator")
    return generator, discriminator


def load_generator(path):
    """Convenience: (generator in eval mode, vocabulary, meta) from an archive."""
    data = load_checkpoint(path)
    generator, _ = build_from_checkpoint(data, load_discriminator=False)
    generator.eval()
    vocabulary = data.meta.get("vocabulary")
    if not vocabulary:
        raise CheckpointError(f"{path} carries no attribute vocabulary")
    return generator, list(vocabulary), data.meta


def restore_optimizer(optimizer, model, arrays, lr):
    """Inject saved Adam moments into a freshly built optimizer."""
    named = dict(model.named_parameters())
    state_dict = optimizer.state_dict()
    index_of = {}
    ordered = [p for group in optimizer.param_groups for p in group["params"]]
    param_names = list(named)
    if len(ordered) != len(param_names):
        raise CheckpointError("optimizer parameter count does not match the model")
    for name, entry in arrays.items():
        if name not in named:
            raise CheckpointError(f"optimizer state for unknown parameter {name!r}")
        idx = param_names.index(name)
        state_dict["state"][idx] = {
            "step": torch.tensor(float(entry["step"])),
            "exp_avg": torch.from_numpy(np.ascontiguousarray(entry["exp_avg"])),
            "exp_avg_sq": torch.from_numpy(np.ascontiguousarray(entry["exp_avg_sq"])),
        }
    for group in state_dict["param_groups"]:
        group["lr"] = lr
    optimizer.load_state_dict(state_dict)
    return optimizer
