"""The four-term training objective as pure functions of model outputs.

Sign conventions: both networks *minimize* their returned losses. The critic
minimizes ``adversarial_loss_d`` (negated real score, positive fake score,
plus the weighted gradient penalty); the generator minimizes
``adversarial_loss_g`` (negated fake score) plus the weighted reconstruction
and classification terms. Patch-map critic scores are reduced by mean over
patch locations and then over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .errors import NumericalError, ValidationError
from .validation import check_same_shape

#: Serialization order of LossReport fields in metrics records.
REPORT_FIELDS = ("adv_d", "adv_g", "gp", "cls_real", "cls_fake",
                 "identity", "bidirectional", "total_g", "total_d")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the reconstruction/classification/penalty terms."""

    bidirectional: float = 10.0
    identity: float = 10.0
    classification: float = 1.0
    gradient_penalty: float = 10.0

    def __post_init__(self):
        for name in ("bidirectional", "identity", "classification", "gradient_penalty"):
            if getattr(self, name) < 0:
                raise ValidationError(f"loss weight {name} must be non-negative")


@dataclass
class LossReport:
    """Scalar loss values of one optimizer step.

    Discriminator steps fill ``adv_d``/``gp``/``cls_real``/``total_d``;
    generator steps fill the remaining fields. Unfilled fields stay None and
    serialize as nulls, in the fixed REPORT_FIELDS order.
    """

    adv_d: float | None = None
    adv_g: float | None = None
    gp: float | None = None
    cls_real: float | None = None
    cls_fake: float | None = None
    identity: float | None = None
    bidirectional: float | None = None
    total_g: float | None = None
    total_d: float | None = None

    def as_record(self):
        return {name: getattr(self, name) for name in REPORT_FIELDS}


def _mean_per_sample(scores):
    """Reduce critic output to one scalar per sample (mean over patches)."""
    if scores.dim() == 1:
        return scores
    return scores.flatten(1).mean(dim=1)


def gradient_penalty(critic: Callable, real, fake, rng=None, eps=None):
    """Unit-gradient-norm penalty along real/fake interpolates.

    Draws per-sample eps ~ U[0,1] from ``rng`` (or uses the given ``eps``,
    scalar or per-sample, for degenerate-endpoint checks), forms
    eps*real + (1-eps)*fake, and returns the batch mean of
    (||grad of the per-sample mean patch score|| - 1)^2.
    """
    check_same_shape(real, fake, "real", "fake")
    batch = real.shape[0]
    if eps is None:
        if rng is None:
            raise ValidationError("gradient_penalty needs either rng or eps")
        eps_arr = rng.random(batch)
    else:
        eps_arr = np.broadcast_to(np.asarray(eps, dtype=np.float64), (batch,))
    eps_t = torch.as_tensor(eps_arr, dtype=real.dtype, device=real.device).view(batch, 1, 1, 1)

    mixed = (eps_t * real.detach() + (1.0 - eps_t) * fake.detach()).requires_grad_(True)
    per_sample = _mean_per_sample(critic(mixed))
    grads, = torch.autograd.grad(per_sample.sum(), mixed, create_graph=True)
    if not torch.isfinite(grads).all():
        raise NumericalError("gradient penalty produced non-finite critic gradients")
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def adversarial_loss_d(real_scores, fake_scores, gp, weights: LossWeights):
    """Critic objective: -mean(real) + mean(fake) + lambda_gp * gp."""
    return (-_mean_per_sample(real_scores).mean()
            + _mean_per_sample(fake_scores).mean()
            + weights.gradient_penalty * gp)


def adversarial_loss_g(fake_scores):
    """Generator-side adversarial term: -mean(fake critic score).

    Real-image and gradient-penalty terms are constant in the generator
    parameters and therefore excluded.
    """
    return -_mean_per_sample(fake_scores).mean()


def _attribute_bce(logits, labels):
    """Sum of per-attribute binary cross-entropies, averaged over the batch.

    Computed in logit space (log-sigmoid form), never materializing
    sigmoid + log, so large |logits| cannot overflow.
    """
    labels = torch.as_tensor(labels, dtype=logits.dtype, device=logits.device)
    if labels.shape != logits.shape:
        raise ValidationError(
            f"labels shape {tuple(labels.shape)} does not match logits shape {tuple(logits.shape)}"
        )
    if not bool(((labels == 0) | (labels == 1)).all()):
        raise ValidationError("attribute labels must be binary (0 or 1)")
    return F.binary_cross_entropy_with_logits(logits, labels, reduction="none").sum(dim=1).mean()


def classification_loss_real(cls_logits, original_attrs):
    """Attribute BCE of the critic's classifier head on real inputs."""
    return _attribute_bce(cls_logits, original_attrs)


def classification_loss_fake(cls_logits, target_attrs):
    """Attribute BCE on generated inputs against the sampled target attributes."""
    return _attribute_bce(cls_logits, target_attrs)


def identity_loss(images, reconstructed):
    """Mean absolute difference between inputs and their own-attribute reconstruction.

    Compares the image head only; the side head carries no identity content.
    """
    check_same_shape(images, reconstructed, "images", "reconstructed")
    return (images - reconstructed).abs().mean()


def bidirectional_loss(images, sides, images_cycled, sides_cycled, latent, latent_of_fake):
    """Image-level cycle L1 plus latent-level consistency L1."""
    check_same_shape(images, images_cycled, "images", "images_cycled")
    check_same_shape(sides, sides_cycled, "sides", "sides_cycled")
    check_same_shape(latent, latent_of_fake, "latent", "latent_of_fake")
    return ((images - images_cycled).abs().mean()
            + (sides - sides_cycled).abs().mean()
            + (latent - latent_of_fake).abs().mean())


def combine_losses(weights: LossWeights, *, adv_d=None, gp=None, cls_real=None,
                   adv_g=None, cls_fake=None, identity=None, bidirectional=None):
    """Assemble a LossReport, filling whichever totals the given parts allow.

    ``total_d`` = adv_d + lambda_cls*cls_real, where adv_d already contains
    the weighted gradient penalty; ``total_g`` = adv_g + lambda_bi*bi +
    lambda_cls*cls_fake + lambda_id*identity. Non-finite parts abort with the
    full per-term breakdown attached.
    """
    parts = dict(adv_d=adv_d, gp=gp, cls_real=cls_real, adv_g=adv_g,
                 cls_fake=cls_fake, identity=identity, bidirectional=bidirectional)
    parts = {k: (None if v is None
                 else float(v.detach()) if isinstance(v, torch.Tensor) else float(v))
             for k, v in parts.items()}
    report = LossReport(**parts)

    d_parts = (parts["adv_d"], parts["cls_real"])
    if all(v is not None for v in d_parts):
        report.total_d = parts["adv_d"] + weights.classification * parts["cls_real"]
    g_parts = (parts["adv_g"], parts["cls_fake"], parts["identity"], parts["bidirectional"])
    if all(v is not None for v in g_parts):
        report.total_g = (parts["adv_g"]
                          + weights.bidirectional * parts["bidirectional"]
                          + weights.classification * parts["cls_fake"]
                          + weights.identity * parts["identity"])

    bad = {k: v for k, v in report.as_record().items() if v is not None and not np.isfinite(v)}
    if bad:
        raise NumericalError(
            f"non-finite loss terms: {sorted(bad)}", context=report.as_record()
        )
    return report
