"""Min-max training engine: schedules, per-phase steps, and the fit loop.

Every batch iteration performs one critic update; every ``n_critic``-th
iteration additionally performs one generator update on the same batch, so
the critic sees fresh batches for each of its updates while the generator
parameters stay fixed across them. All stochastic decisions (augmentation
flips, target-attribute permutations, gradient-penalty interpolation points)
are drawn from a single serializable numpy stream, and epoch shuffles derive
from (seed, epoch), so runs are bit-reproducible and checkpoints resume
mid-epoch exactly. Determinism holds under the single-threaded execution
contract: ``fit`` pins torch to one thread while it runs.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from . import checkpoint as ckpt
from .data import DatasetManifest, HeatmapSpec, augment_flip, load_batch, sample_target_attributes
from .errors import ConfigurationError, NumericalError, ValidationError
from .losses import (LossWeights, adversarial_loss_d, adversarial_loss_g,
                     bidirectional_loss, classification_loss_fake,
                     classification_loss_real, combine_losses, gradient_penalty,
                     identity_loss)
from .model import (Discriminator, DiscriminatorConfig, Generator,
                    GeneratorConfig, build_models)

METRICS_FIELDS = ("step", "epoch", "phase", "lr", "adv_d", "adv_g", "gp", "cls_real",
                  "cls_fake", "identity", "bidirectional", "total_g", "total_d")


@dataclass(frozen=True)
class TrainConfig:
    """Full training recipe; serializes to/from the JSON config file."""

    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    lr_base: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    total_epochs: int = 200
    decay_start_epoch: int = 100
    n_critic: int = 5
    seed: int = 0
    checkpoint_interval: int = 0      # critic steps between rolling checkpoints; 0 = off
    refinement: bool = False
    heatmap_sigma: float | None = None  # None = image_size / 64

    def __post_init__(self):
        if self.n_critic < 1:
            raise ConfigurationError(f"n_critic must be >= 1, got {self.n_critic}")
        if not 0 <= self.decay_start_epoch < self.total_epochs:
            raise ConfigurationError(
                f"decay_start_epoch {self.decay_start_epoch} must lie in [0, total_epochs)"
            )
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.generator.image_size != self.discriminator.image_size:
            raise ConfigurationError(
                "generator and discriminator image_size differ: "
                f"{self.generator.image_size} vs {self.discriminator.image_size}"
            )
        if self.generator.num_attributes != self.discriminator.num_attributes:
            raise ConfigurationError(
                "generator and discriminator num_attributes differ: "
                f"{self.generator.num_attributes} vs {self.discriminator.num_attributes}"
            )

    @property
    def image_size(self):
        return self.generator.image_size

    @property
    def num_attributes(self):
        return self.generator.num_attributes

    def heatmap_spec(self):
        if self.heatmap_sigma is not None:
            return HeatmapSpec(sigma=self.heatmap_sigma)
        return HeatmapSpec.for_size(self.image_size)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        try:
            for key, sub in (("generator", GeneratorConfig),
                             ("discriminator", DiscriminatorConfig),
                             ("weights", LossWeights)):
                if key in raw and isinstance(raw[key], dict):
                    raw[key] = sub(**raw[key])
            return cls(**raw)
        except TypeError as exc:
            raise ConfigurationError(f"bad train config: {exc}") from exc

    @classmethod
    def from_json(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
        return cls.from_dict(raw)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def scaled_config(image_size=128, num_attributes=8, base_channels=64,
                  num_residual_blocks=6, downsample_factor=16,
                  disc_base_channels=None, disc_num_layers=None, leaky_slope=0.01,
                  **overrides):
    """Build a TrainConfig whose networks are scaled consistently to a size.

    The critic depth defaults to min(6, log2(image_size) - 1) so its patch
    map keeps at least 2x2 cells at small sizes; channel ladders keep their
    per-stage doubling at any base width.
    """
    if disc_num_layers is None:
        disc_num_layers = min(6, max(1, int(math.log2(image_size)) - 1))
    if disc_base_channels is None:
        disc_base_channels = base_channels
    generator = GeneratorConfig(
        image_size=image_size, base_channels=base_channels,
        num_residual_blocks=num_residual_blocks, num_attributes=num_attributes,
        downsample_factor=downsample_factor,
    )
    discriminator = DiscriminatorConfig(
        image_size=image_size, base_channels=disc_base_channels,
        num_layers=disc_num_layers, num_attributes=num_attributes,
        leaky_slope=leaky_slope,
    )
    return TrainConfig(generator=generator, discriminator=discriminator, **overrides)


class Batch(NamedTuple):
    images: torch.Tensor
    sides: torch.Tensor
    labels: torch.Tensor


@dataclass
class TrainState:
    """Mutable state of a run; serializing and restoring it resumes exactly."""

    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: np.random.Generator
    vocabulary: list
    step: int = 0
    epoch: int = 0
    d_steps: int = 0
    g_steps: int = 0
    batch_pos: int = 0
    metrics_path: Path | None = None


def lr_schedule(epoch, cfg: TrainConfig):
    """Constant base rate, then linear decay to zero at total_epochs."""
    if not 0 <= epoch <= cfg.total_epochs:
        raise ValidationError(f"epoch {epoch} outside [0, {cfg.total_epochs}]")
    if epoch < cfg.decay_start_epoch:
        return cfg.lr_base
    span = cfg.total_epochs - cfg.decay_start_epoch
    return cfg.lr_base * (cfg.total_epochs - epoch) / span


def epoch_permutation(seed, epoch, n):
    """Shuffle order of one epoch, recomputable at resume from (seed, epoch)."""
    return np.random.default_rng([seed, epoch, 0xE9]).permutation(n)


def _make_optimizer(model, cfg: TrainConfig):
    return torch.optim.Adam(model.parameters(), lr=cfg.lr_base,
                            betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)


def init_train_state(cfg: TrainConfig, vocabulary):
    if len(vocabulary) != cfg.num_attributes:
        raise ConfigurationError(
            f"vocabulary has {len(vocabulary)} attributes, config expects {cfg.num_attributes}"
        )
    generator, discriminator = build_models(cfg.generator, cfg.discriminator, seed=cfg.seed)
    return TrainState(
        generator=generator,
        discriminator=discriminator,
        opt_g=_make_optimizer(generator, cfg),
        opt_d=_make_optimizer(discriminator, cfg),
        rng=np.random.default_rng([cfg.seed, 0xF17]),
        vocabulary=list(vocabulary),
    )


def _set_lr(state: TrainState, lr):
    for opt in (state.opt_g, state.opt_d):
        for group in opt.param_groups:
            group["lr"] = lr


def _real_pair(batch: Batch, cfg: TrainConfig):
    # refinement runs put the real photograph (the side input) in the image
    # slot so the critic's real examples show real imagery there
    if cfg.refinement:
        return torch.cat([batch.sides, batch.images], dim=1)
    return torch.cat([batch.images, batch.sides], dim=1)


def _sample_targets(batch: Batch, state: TrainState):
    targets = sample_target_attributes(batch.labels.numpy(), state.rng)
    return torch.from_numpy(targets)


def train_step_d(batch: Batch, state: TrainState, cfg: TrainConfig):
    """One critic update; generator parameters are never touched."""
    weights = cfg.weights
    targets = _sample_targets(batch, state)
    with torch.no_grad():
        fake = state.generator(batch.images, batch.sides, targets)
    real_pair = _real_pair(batch, cfg)
    fake_pair = torch.cat([fake.image, fake.side], dim=1)

    real_out = state.discriminator.forward_concat(real_pair)
    fake_src = state.discriminator.score_concat(fake_pair)
    gp = gradient_penalty(state.discriminator.score_concat, real_pair, fake_pair, rng=state.rng)
    adv = adversarial_loss_d(real_out.src_map, fake_src, gp, weights)
    cls_real = classification_loss_real(real_out.cls_logits, batch.labels)

    report = combine_losses(weights, adv_d=adv, gp=gp, cls_real=cls_real)
    state.opt_d.zero_grad(set_to_none=True)
    (adv + weights.classification * cls_real).backward()
    state.opt_d.step()
    state.step += 1
    state.d_steps += 1
    return report


def generator_objective(generator, discriminator, batch: Batch, targets, weights: LossWeights):
    """Full generator loss of one batch as a differentiable scalar.

    Wires the adversarial, fake-attribute classification, bidirectional
    (image cycle + latent consistency), and identity terms; returns the
    weighted total and the individual term tensors.
    """
    latent = generator.encode(torch.cat([batch.images, batch.sides], dim=1))
    fake = generator.decode(latent, targets)
    fake_pair = torch.cat([fake.image, fake.side], dim=1)
    fake_out = discriminator.forward_concat(fake_pair)
    adv = adversarial_loss_g(fake_out.src_map)
    cls_fake = classification_loss_fake(fake_out.cls_logits, targets)

    latent_of_fake = generator.encode(fake_pair)
    cycled = generator.decode(latent_of_fake, batch.labels)
    bi = bidirectional_loss(batch.images, batch.sides, cycled.image, cycled.side,
                            latent, latent_of_fake)
    same_attr = generator.decode(latent, batch.labels)
    idn = identity_loss(batch.images, same_attr.image)

    total = (adv + weights.bidirectional * bi
             + weights.classification * cls_fake + weights.identity * idn)
    return total, {"adv_g": adv, "cls_fake": cls_fake, "identity": idn, "bidirectional": bi}


def train_step_g(batch: Batch, state: TrainState, cfg: TrainConfig):
    """One generator update; discriminator parameters are never touched."""
    targets = _sample_targets(batch, state)
    total, parts = generator_objective(state.generator, state.discriminator, batch,
                                       targets, cfg.weights)
    report = combine_losses(cfg.weights, **parts)
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    state.step += 1
    state.g_steps += 1
    return report


def metrics_record(state: TrainState, phase, lr, report):
    values = {"step": state.step, "epoch": state.epoch, "phase": phase, "lr": lr,
              **report.as_record()}
    return json.dumps({key: values[key] for key in METRICS_FIELDS})


def _save(state: TrainState, cfg: TrainConfig, path):
    meta = {"config": cfg.to_dict(), "vocabulary": state.vocabulary}
    counters = {"step": state.step, "epoch": state.epoch, "d_steps": state.d_steps,
                "g_steps": state.g_steps, "batch_pos": state.batch_pos}
    return ckpt.save_checkpoint(path, state.generator, state.discriminator, meta,
                                opt_g=state.opt_g, opt_d=state.opt_d, counters=counters,
                                rng_state=state.rng.bit_generator.state)


def restore_train_state(path, cfg: TrainConfig | None = None):
    """Rebuild a TrainState from a training checkpoint.

    When ``cfg`` is given it must agree with the snapshot on everything that
    shapes the model; schedule fields (total_epochs etc.) may differ so a run
    can be extended.
    """
    data = ckpt.load_checkpoint(path)
    saved_cfg = TrainConfig.from_dict(data.meta["config"])
    cfg = cfg or saved_cfg
    if cfg.generator != saved_cfg.generator or cfg.discriminator != saved_cfg.discriminator:
        raise ConfigurationError("resume config model sections differ from the checkpoint snapshot")
    generator, discriminator = ckpt.build_from_checkpoint(data, load_discriminator=True)
    state = TrainState(
        generator=generator,
        discriminator=discriminator,
        opt_g=_make_optimizer(generator, cfg),
        opt_d=_make_optimizer(discriminator, cfg),
        rng=np.random.default_rng(),
        vocabulary=list(data.meta["vocabulary"]),
        **data.counters,
    )
    lr = lr_schedule(min(state.epoch, cfg.total_epochs), cfg)
    ckpt.restore_optimizer(state.opt_g, generator, data.adam["generator"], lr)
    ckpt.restore_optimizer(state.opt_d, discriminator, data.adam["discriminator"], lr)
    if data.rng_state is None:
        raise ConfigurationError(f"{path} carries no training RNG state; cannot resume")
    state.rng.bit_generator.state = data.rng_state
    return state


def _load_training_arrays(manifest: DatasetManifest, cfg: TrainConfig):
    images, sides, labels = load_batch(manifest, range(len(manifest)), cfg.image_size,
                                       cfg.heatmap_spec())
    return images, sides, labels


def fit(manifest: DatasetManifest, cfg: TrainConfig, out_dir, resume_from=None):
    """Run the full training loop; returns the final TrainState.

    Writes ``metrics.jsonl`` (one record per optimizer update, fixed field
    order), rolling ``checkpoints/latest.npz`` at epoch boundaries, numbered
    ``checkpoints/step_*.npz`` every ``checkpoint_interval`` critic steps,
    and ``checkpoints/final.npz`` on completion.
    """
    if len(manifest) < cfg.batch_size:
        raise ValidationError(
            f"manifest has {len(manifest)} entries, need at least batch_size={cfg.batch_size}"
        )
    if manifest.num_attributes != cfg.num_attributes:
        raise ConfigurationError(
            f"manifest vocabulary size {manifest.num_attributes} does not match "
            f"config num_attributes {cfg.num_attributes}"
        )
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        state = restore_train_state(resume_from, cfg)
    else:
        state = init_train_state(cfg, manifest.vocabulary)
    state.metrics_path = out_dir / "metrics.jsonl"

    images, sides, labels = _load_training_arrays(manifest, cfg)
    n = images.shape[0]
    num_batches = n // cfg.batch_size

    old_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    mode = "a" if resume_from is not None else "w"
    try:
        with open(state.metrics_path, mode) as metrics:
            while state.epoch < cfg.total_epochs:
                perm = epoch_permutation(cfg.seed, state.epoch, n)
                lr = lr_schedule(state.epoch, cfg)
                _set_lr(state, lr)
                for b in range(state.batch_pos, num_batches):
                    idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                    x, s, _ = augment_flip(images[idx], sides[idx], rng=state.rng)
                    batch = Batch(torch.from_numpy(x), torch.from_numpy(s),
                                  torch.from_numpy(labels[idx].copy()))
                    try:
                        report = train_step_d(batch, state, cfg)
                        metrics.write(metrics_record(state, "d", lr, report) + "\n")
                        if (b + 1) % cfg.n_critic == 0:
                            report = train_step_g(batch, state, cfg)
                            metrics.write(metrics_record(state, "g", lr, report) + "\n")
                    except NumericalError as exc:
                        exc.context.update(step=state.step, epoch=state.epoch)
                        raise
                    state.batch_pos = b + 1
                    if cfg.checkpoint_interval and state.d_steps % cfg.checkpoint_interval == 0:
                        _save(state, cfg, ckpt_dir / f"step_{state.d_steps:08d}.npz")
                state.batch_pos = 0
                state.epoch += 1
                _save(state, cfg, ckpt_dir / "latest.npz")
            _save(state, cfg, ckpt_dir / "final.npz")
    finally:
        torch.set_num_threads(old_threads)
    return state
