"""Attribute-guided face image translation with a single encoder/decoder GAN.

One generator translates an input image, conditioned on a landmark-heatmap
side image and a target attribute vector, into the target attribute domain;
a patch critic with an auxiliary attribute classifier drives the adversarial
training together with identity, bidirectional (image + latent cycle), and
gradient-penalty terms. The same machinery refines synthetic frontal images
into realistic ones when a real photograph rides in the side slot.
"""

from .data import (DatasetManifest, HeatmapSpec, encode_attributes,
                   generate_toy_dataset, generate_toy_refinement_dataset,
                   load_batch, load_manifest, render_heatmap)
from .errors import (CheckpointError, ConfigurationError, FaceSynthError,
                     IngestionError, NumericalError, ValidationError)
from .estimator import FaceTranslator
from .evaluation import (EvalReport, ExpressionClassifier, augmentation_sweep,
                         evaluate_model, fake_attribute_accuracy,
                         train_oracle_classifier)
from .losses import LossReport, LossWeights
from .model import (Discriminator, DiscriminatorConfig, Generator,
                    GeneratorConfig, build_models)
from .synthesis import RefinementRequest, SynthesisRequest, refine, synthesize_grid
from .training import TrainConfig, TrainState, fit, lr_schedule, scaled_config

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigurationError", "DatasetManifest", "Discriminator",
    "DiscriminatorConfig", "EvalReport", "ExpressionClassifier", "FaceSynthError",
    "FaceTranslator", "Generator", "GeneratorConfig", "HeatmapSpec", "IngestionError",
    "LossReport", "LossWeights", "NumericalError", "RefinementRequest",
    "SynthesisRequest", "TrainConfig", "TrainState", "ValidationError",
    "augmentation_sweep", "build_models", "encode_attributes", "evaluate_model",
    "fake_attribute_accuracy", "fit", "generate_toy_dataset",
    "generate_toy_refinement_dataset", "load_batch", "load_manifest", "lr_schedule",
    "refine", "render_heatmap", "scaled_config", "synthesize_grid",
    "train_oracle_classifier",
]
