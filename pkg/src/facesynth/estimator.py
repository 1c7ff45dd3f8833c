"""sklearn-style facade over the training engine and generator.

``FaceTranslator`` packs the whole recipe into estimator hyperparameters:
``fit`` trains on a dataset manifest (writing metrics and checkpoints under
``output_dir``), ``transform`` translates image/side batches to target
attributes with the fitted generator. ``get_params``/``set_params``/``clone``
come from :class:`sklearn.base.BaseEstimator`.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import training
from .data import DatasetManifest, encode_attributes, load_manifest
from .errors import ValidationError
from .losses import LossWeights
from .model import DiscriminatorConfig, GeneratorConfig
from .validation import check_attribute_batch, check_image_batch


class FaceTranslator(BaseEstimator):
    """Attribute-guided image translator with a fit/transform surface."""

    def __init__(self, image_size=128, base_channels=64, num_residual_blocks=6,
                 downsample_factor=16, disc_base_channels=None, disc_num_layers=None,
                 leaky_slope=0.01, lambda_bidirectional=10.0, lambda_identity=10.0,
                 lambda_classification=1.0, lambda_gradient_penalty=10.0,
                 lr_base=1e-4, adam_beta1=0.5, adam_beta2=0.999, batch_size=8,
                 total_epochs=200, decay_start_epoch=100, n_critic=5, seed=0,
                 checkpoint_interval=0, refinement=False, heatmap_sigma=None):
        self.image_size = image_size
        self.base_channels = base_channels
        self.num_residual_blocks = num_residual_blocks
        self.downsample_factor = downsample_factor
        self.disc_base_channels = disc_base_channels
        self.disc_num_layers = disc_num_layers
        self.leaky_slope = leaky_slope
        self.lambda_bidirectional = lambda_bidirectional
        self.lambda_identity = lambda_identity
        self.lambda_classification = lambda_classification
        self.lambda_gradient_penalty = lambda_gradient_penalty
        self.lr_base = lr_base
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.batch_size = batch_size
        self.total_epochs = total_epochs
        self.decay_start_epoch = decay_start_epoch
        self.n_critic = n_critic
        self.seed = seed
        self.checkpoint_interval = checkpoint_interval
        self.refinement = refinement
        self.heatmap_sigma = heatmap_sigma

    def build_config(self, num_attributes):
        """Materialize the TrainConfig these hyperparameters describe."""
        return training.scaled_config(
            image_size=self.image_size,
            num_attributes=num_attributes,
            base_channels=self.base_channels,
            num_residual_blocks=self.num_residual_blocks,
            downsample_factor=self.downsample_factor,
            disc_base_channels=self.disc_base_channels,
            disc_num_layers=self.disc_num_layers,
            leaky_slope=self.leaky_slope,
            weights=LossWeights(
                bidirectional=self.lambda_bidirectional,
                identity=self.lambda_identity,
                classification=self.lambda_classification,
                gradient_penalty=self.lambda_gradient_penalty,
            ),
            lr_base=self.lr_base,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            batch_size=self.batch_size,
            total_epochs=self.total_epochs,
            decay_start_epoch=self.decay_start_epoch,
            n_critic=self.n_critic,
            seed=self.seed,
            checkpoint_interval=self.checkpoint_interval,
            refinement=self.refinement,
            heatmap_sigma=self.heatmap_sigma,
        )

    def fit(self, manifest, output_dir=None):
        """Train on a DatasetManifest or dataset directory path.

        Artifacts (metrics.jsonl, checkpoints/) land under ``output_dir``;
        omitted, a fresh temporary directory is created and kept.
        """
        if not isinstance(manifest, DatasetManifest):
            manifest = load_manifest(manifest)
        if output_dir is None:
            output_dir = tempfile.mkdtemp(prefix="facesynth-run-")
        cfg = self.build_config(len(manifest.vocabulary))
        state = training.fit(manifest, cfg, output_dir)
        self.output_dir_ = Path(output_dir)
        self.checkpoint_path_ = self.output_dir_ / "checkpoints" / "final.npz"
        self.vocabulary_ = list(manifest.vocabulary)
        self.generator_ = state.generator.eval()
        self.train_config_ = cfg
        return self

    @classmethod
    def from_checkpoint(cls, path):
        """Rebuild a fitted translator from a checkpoint archive."""
        from .checkpoint import load_generator

        generator, vocabulary, meta = load_generator(path)
        cfg = training.TrainConfig.from_dict(meta["config"])
        est = cls(
            image_size=cfg.generator.image_size,
            base_channels=cfg.generator.base_channels,
            num_residual_blocks=cfg.generator.num_residual_blocks,
            downsample_factor=cfg.generator.downsample_factor,
            disc_base_channels=cfg.discriminator.base_channels,
            disc_num_layers=cfg.discriminator.num_layers,
            leaky_slope=cfg.discriminator.leaky_slope,
            lambda_bidirectional=cfg.weights.bidirectional,
            lambda_identity=cfg.weights.identity,
            lambda_classification=cfg.weights.classification,
            lambda_gradient_penalty=cfg.weights.gradient_penalty,
            lr_base=cfg.lr_base, adam_beta1=cfg.adam_beta1, adam_beta2=cfg.adam_beta2,
            batch_size=cfg.batch_size, total_epochs=cfg.total_epochs,
            decay_start_epoch=cfg.decay_start_epoch, n_critic=cfg.n_critic,
            seed=cfg.seed, checkpoint_interval=cfg.checkpoint_interval,
            refinement=cfg.refinement, heatmap_sigma=cfg.heatmap_sigma,
        )
        est.generator_ = generator
        est.vocabulary_ = vocabulary
        est.checkpoint_path_ = Path(path)
        est.train_config_ = cfg
        return est

    def _attribute_matrix(self, attributes, batch):
        if isinstance(attributes, str):
            attributes = [attributes] * batch
        attributes = list(attributes) if not isinstance(attributes, np.ndarray) else attributes
        if isinstance(attributes, list) and attributes and isinstance(attributes[0], str):
            rows = [encode_attributes([name], self.vocabulary_) for name in attributes]
            attributes = np.stack(rows)
        y = check_attribute_batch(attributes, "attributes",
                                  num_attributes=len(self.vocabulary_))
        if y.shape[0] != batch:
            raise ValidationError(f"attributes rows {y.shape[0]} != batch size {batch}")
        return y

    def translate(self, images, sides, attributes):
        """Translate batches; returns (image head, side head) numpy arrays."""
        check_is_fitted(self, "generator_")
        x = check_image_batch(images, "images", channels=3, size=self.generator_.cfg.image_size)
        s = check_image_batch(sides, "sides", channels=3, size=self.generator_.cfg.image_size)
        if x.shape[0] != s.shape[0]:
            raise ValidationError(f"images batch {x.shape[0]} != sides batch {s.shape[0]}")
        y = self._attribute_matrix(attributes, x.shape[0])
        with torch.no_grad():
            out = self.generator_(x, s, y)
        return out.image.numpy(), out.side.numpy()

    def transform(self, images, sides, attributes):
        """Image head only, for pipeline-style use."""
        return self.translate(images, sides, attributes)[0]
