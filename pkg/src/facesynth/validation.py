"""Input validation helpers used by the public entry points.

All helpers raise :class:`~facesynth.errors.ValidationError` with a message
naming the offending argument, and return the (possibly converted) value so
they can be used inline.
"""

import numpy as np
import torch

from .errors import ValidationError


def check_image_batch(x, name="images", channels=None, size=None):
    """Validate a rank-4 (batch, channel, height, width) image tensor.

    Accepts a numpy array or torch tensor; returns a float32 torch tensor.
    """
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    if not isinstance(x, torch.Tensor):
        raise ValidationError(f"{name} must be a numpy array or torch tensor, got {type(x).__name__}")
    if x.dim() != 4:
        raise ValidationError(f"{name} must have rank 4 (batch, channel, height, width), got rank {x.dim()}")
    if channels is not None and x.shape[1] != channels:
        raise ValidationError(f"{name} must have {channels} channels, got {x.shape[1]}")
    if size is not None and (x.shape[2] != size or x.shape[3] != size):
        raise ValidationError(f"{name} must be {size}x{size} pixels, got {x.shape[2]}x{x.shape[3]}")
    x = x.float()
    if not torch.isfinite(x).all():
        raise ValidationError(f"{name} contains non-finite values")
    return x


def check_attribute_batch(y, name="attributes", num_attributes=None, binary=True):
    """Validate a (batch, num_attributes) attribute matrix; returns float32 torch tensor."""
    if isinstance(y, np.ndarray):
        y = torch.from_numpy(np.ascontiguousarray(y))
    if not isinstance(y, torch.Tensor):
        raise ValidationError(f"{name} must be a numpy array or torch tensor, got {type(y).__name__}")
    if y.dim() == 1:
        y = y.unsqueeze(0)
    if y.dim() != 2:
        raise ValidationError(f"{name} must have rank 2 (batch, num_attributes), got rank {y.dim()}")
    if num_attributes is not None and y.shape[1] != num_attributes:
        raise ValidationError(f"{name} must have {num_attributes} columns, got {y.shape[1]}")
    y = y.float()
    if binary and not bool(((y == 0) | (y == 1)).all()):
        raise ValidationError(f"{name} must contain only 0/1 labels")
    return y


def check_same_shape(a, b, name_a="first", name_b="second"):
    if tuple(a.shape) != tuple(b.shape):
        raise ValidationError(
            f"{name_a} and {name_b} must have identical shapes, got {tuple(a.shape)} vs {tuple(b.shape)}"
        )


def check_finite_scalar(value, name):
    value = float(value)
    if not np.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value}")
    return value
