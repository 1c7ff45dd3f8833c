"""Generator and discriminator networks for attribute-guided image translation.

The generator is an encoder/decoder pair sharing one latent space: the encoder
maps a 6-channel input (image concatenated channel-wise with its side
conditional image) down by the configured factor, a residual bottleneck keeps
width constant, and the decoder injects the target attribute vector and
upsamples back with sub-pixel convolutions into two Tanh heads (image and
side). The discriminator is a patch critic over the same 6-channel input with
an auxiliary attribute classification head.

Default-scale architecture (image_size=128, base_channels=64):

    Encoder:     (h,w,6)->(h,w,64)       Conv 7x7 s1 p3, IN, ReLU
                 (h,w,64)->(h/2,.,128)   Conv 4x4 s2 p1, IN, ReLU
                 ... four stride-2 stages doubling width ...
                 (h/8,.,512)->(h/16,.,1024)
    Bottleneck:  6 x residual block      Conv 3x3 s1 p1, IN, ReLU (constant width)
    Decoder:     (h/16,.,1024+n_y)->(h/8,.,512)  sub-pixel conv 3x3 (x2 up), IN, ReLU
                 ... four x2 stages halving width ...
    Heads:       (h,w,64)->(h,w,3)       Conv 7x7 s1 p3, Tanh   (image and side)

    Critic:      six Conv 4x4 s2 p1 + LeakyReLU stages doubling width,
                 then Conv 3x3 s1 p1 -> (h/64,w/64,1) patch scores
                 and FC -> m attribute logits. No normalization layers:
                 the gradient penalty requires per-sample critic gradients,
                 which batch-coupled normalization would invalidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError


@dataclass(frozen=True)
class GeneratorConfig:
    """Shape parameters of the encoder/decoder generator.

    ``latent_channels`` defaults to ``base_channels * downsample_factor`` so
    the channel ladder doubles at every stride-2 stage; passing an
    inconsistent explicit value is a configuration error. ``image_size`` must
    be divisible by ``downsample_factor`` (a power of two, 16 at full scale).
    """

    image_size: int = 128
    base_channels: int = 64
    latent_channels: int | None = None
    num_residual_blocks: int = 6
    num_attributes: int = 8
    downsample_factor: int = 16

    def __post_init__(self):
        f = self.downsample_factor
        if f < 2 or (f & (f - 1)) != 0:
            raise ConfigurationError(f"downsample_factor must be a power of two >= 2, got {f}")
        if self.image_size % f != 0:
            raise ConfigurationError(
                f"image_size {self.image_size} is not divisible by downsample_factor {f}"
            )
        if self.latent_channels is None:
            object.__setattr__(self, "latent_channels", self.base_channels * f)
        elif self.latent_channels != self.base_channels * f:
            raise ConfigurationError(
                f"latent_channels {self.latent_channels} breaks the doubling channel ladder; "
                f"expected base_channels*downsample_factor = {self.base_channels * f}"
            )
        if self.num_attributes < 1:
            raise ConfigurationError(f"num_attributes must be >= 1, got {self.num_attributes}")
        if self.num_residual_blocks < 0:
            raise ConfigurationError("num_residual_blocks must be >= 0")

    @property
    def num_stages(self):
        """Number of stride-2 encoder stages (= decoder upsampling stages)."""
        return int(math.log2(self.downsample_factor))

    @property
    def latent_size(self):
        return self.image_size // self.downsample_factor


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Shape parameters of the patch critic with attribute classifier head."""

    image_size: int = 128
    base_channels: int = 64
    num_layers: int = 6
    num_attributes: int = 8
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigurationError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.image_size % (2 ** self.num_layers) != 0:
            raise ConfigurationError(
                f"image_size {self.image_size} is not divisible by 2^num_layers = {2 ** self.num_layers}"
            )
        if self.num_attributes < 1:
            raise ConfigurationError(f"num_attributes must be >= 1, got {self.num_attributes}")

    @property
    def patch_size(self):
        return self.image_size // (2 ** self.num_layers)

    @property
    def top_channels(self):
        return self.base_channels * (2 ** (self.num_layers - 1))


class GeneratorOutput(NamedTuple):
    image: torch.Tensor
    side: torch.Tensor


class DiscriminatorOutput(NamedTuple):
    src_map: torch.Tensor
    cls_logits: torch.Tensor


class LayerRow(NamedTuple):
    """One architecture-table row: shapes are (height, width, channels)."""

    part: str
    layer: str
    in_shape: tuple
    out_shape: tuple
    filter_size: tuple | None
    stride: int | None
    padding: int | None


class InstanceNorm(nn.InstanceNorm2d):
    """Per-sample, per-channel normalization that also accepts 1x1 maps.

    A single spatial element has zero variance, so its normalized value is 0
    and the output is the affine bias; torch's built-in guard rejects that
    case, which the x16-downsample contract hits at 16x16 inputs.
    """

    def forward(self, x):
        if x.shape[2] * x.shape[3] == 1:
            return x * 0.0 + self.bias.view(1, -1, 1, 1) if self.affine else x * 0.0
        return super().forward(x)


class ResidualBlock(nn.Module):
    """Constant-width residual block: x + ReLU(IN(Conv3x3(x)))."""

    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, 1, 1)
        self.norm = InstanceNorm(channels, eps=1e-5, affine=True)

    def forward(self, x):
        return x + F.relu(self.norm(self.conv(x)))


class SubPixelUpsample(nn.Module):
    """x2 upsampling stage: conv to 4*out_channels, then depth-to-space.

    The depth-to-space rearrangement places the four channel groups of each
    output channel into the 2x2 sub-pixel cell in row-major order: channel
    4c+0 goes top-left, 4c+1 top-right, 4c+2 bottom-left, 4c+3 bottom-right.
    """

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels * 4, 3, 1, 1)
        self.norm = InstanceNorm(out_channels, eps=1e-5, affine=True)

    def forward(self, x):
        return F.relu(self.norm(F.pixel_shuffle(self.conv(x), 2)))


def init_weights(module, seed=0):
    """Initialize conv/linear weights ~ N(0, 0.02), biases and norm offsets 0."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            m.weight.data.normal_(0.0, 0.02, generator=gen)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            m.weight.data.fill_(1.0)
            m.bias.data.zero_()
    return module


def critic_trunk(in_channels, base_channels, num_layers, leaky_slope):
    """The critic's hidden stack: stride-2 conv + leaky ReLU, width doubling.

    Shared between the discriminator and the evaluation-side attribute
    classifier (which differs only in its final fully connected head).
    """
    layers = []
    channels = in_channels
    for i in range(num_layers):
        out = base_channels * (2 ** i)
        layers += [nn.Conv2d(channels, out, 4, 2, 1), nn.LeakyReLU(leaky_slope)]
        channels = out
    return nn.Sequential(*layers)


class Generator(nn.Module):
    """Encoder/decoder generator with attribute injection at the decoder entry.

    ``forward(images, sides, attrs)`` is the full translation
    decode(encode(concat(images, sides)), attrs) -> (image, side) heads.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg

        enc = [nn.Conv2d(6, cfg.base_channels, 7, 1, 3),
               InstanceNorm(cfg.base_channels, eps=1e-5, affine=True),
               nn.ReLU()]
        channels = cfg.base_channels
        for _ in range(cfg.num_stages):
            enc += [nn.Conv2d(channels, channels * 2, 4, 2, 1),
                    InstanceNorm(channels * 2, eps=1e-5, affine=True),
                    nn.ReLU()]
            channels *= 2
        self.encoder = nn.Sequential(*enc)
        self.bottleneck = nn.Sequential(
            *[ResidualBlock(cfg.latent_channels) for _ in range(cfg.num_residual_blocks)]
        )

        stages = []
        channels = cfg.latent_channels + cfg.num_attributes
        width = cfg.latent_channels
        for _ in range(cfg.num_stages):
            width //= 2
            stages.append(SubPixelUpsample(channels, width))
            channels = width
        self.decoder = nn.Sequential(*stages)
        self.image_head = nn.Conv2d(width, 3, 7, 1, 3)
        self.side_head = nn.Conv2d(width, 3, 7, 1, 3)

    def encode(self, x_and_s):
        """Map the 6-channel concatenated input to the shared latent map."""
        cfg = self.cfg
        if x_and_s.dim() != 4 or x_and_s.shape[1] != 6:
            raise ConfigurationError(
                f"encoder input must be (batch, 6, h, w), got {tuple(x_and_s.shape)}"
            )
        if x_and_s.shape[2] != cfg.image_size or x_and_s.shape[3] != cfg.image_size:
            raise ConfigurationError(
                f"encoder input spatial size {x_and_s.shape[2]}x{x_and_s.shape[3]} "
                f"does not match configured image_size {cfg.image_size}"
            )
        return self.bottleneck(self.encoder(x_and_s))

    def decode(self, latent, attrs):
        """Broadcast attrs over the latent grid, concatenate, and upsample."""
        cfg = self.cfg
        if latent.shape[1] != cfg.latent_channels:
            raise ConfigurationError(
                f"latent has {latent.shape[1]} channels, config expects {cfg.latent_channels}"
            )
        if attrs.dim() != 2 or attrs.shape[1] != cfg.num_attributes:
            raise ConfigurationError(
                f"attribute vector length {tuple(attrs.shape)[-1]} does not match "
                f"num_attributes {cfg.num_attributes}"
            )
        attr_map = attrs.to(latent.dtype)[:, :, None, None].expand(
            -1, -1, latent.shape[2], latent.shape[3]
        )
        h = self.decoder(torch.cat([latent, attr_map], dim=1))
        return GeneratorOutput(torch.tanh(self.image_head(h)), torch.tanh(self.side_head(h)))

    def forward(self, images, sides, attrs):
        return self.decode(self.encode(torch.cat([images, sides], dim=1)), attrs)

    def layer_table(self):
        """Architecture-table rows derived from the live modules."""
        cfg = self.cfg
        rows = []
        size = cfg.image_size
        for m in self.encoder:
            if isinstance(m, nn.Conv2d):
                out_size = size // m.stride[0]
                rows.append(LayerRow("encoder", "Conv+IN+ReLU",
                                     (size, size, m.in_channels),
                                     (out_size, out_size, m.out_channels),
                                     tuple(m.kernel_size), m.stride[0], m.padding[0]))
                size = out_size
        for block in self.bottleneck:
            rows.append(LayerRow("bottleneck", "RB:Conv+IN+ReLU",
                                 (size, size, block.conv.in_channels),
                                 (size, size, block.conv.out_channels),
                                 tuple(block.conv.kernel_size), 1, block.conv.padding[0]))
        in_channels = cfg.latent_channels + cfg.num_attributes
        for stage in self.decoder:
            out_channels = stage.conv.out_channels // 4
            rows.append(LayerRow("decoder", "Sub-Pixel Conv+IN+ReLU",
                                 (size, size, in_channels),
                                 (size * 2, size * 2, out_channels),
                                 tuple(stage.conv.kernel_size), 2, stage.conv.padding[0]))
            size *= 2
            in_channels = out_channels
        for name, head in (("Image output", self.image_head), ("Side output", self.side_head)):
            rows.append(LayerRow("decoder", f"{name}:Conv+Tanh",
                                 (size, size, head.in_channels),
                                 (size, size, head.out_channels),
                                 tuple(head.kernel_size), head.stride[0], head.padding[0]))
        return rows


class Discriminator(nn.Module):
    """Patch critic over 6-channel inputs with an attribute classifier head.

    ``src_map`` carries raw (un-squashed) Wasserstein critic scores per patch;
    ``cls_logits`` are pre-sigmoid attribute scores from a fully connected
    layer over the flattened top feature map.
    """

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = critic_trunk(6, cfg.base_channels, cfg.num_layers, cfg.leaky_slope)
        self.src_conv = nn.Conv2d(cfg.top_channels, 1, 3, 1, 1)
        self.cls_fc = nn.Linear(cfg.top_channels * cfg.patch_size ** 2, cfg.num_attributes)

    def forward(self, images, sides):
        return self.forward_concat(torch.cat([images, sides], dim=1))

    def forward_concat(self, x_and_s):
        cfg = self.cfg
        if x_and_s.dim() != 4 or x_and_s.shape[1] != 6:
            raise ConfigurationError(
                f"discriminator input must be (batch, 6, h, w), got {tuple(x_and_s.shape)}"
            )
        if x_and_s.shape[2] != cfg.image_size or x_and_s.shape[3] != cfg.image_size:
            raise ConfigurationError(
                f"discriminator input spatial size {x_and_s.shape[2]}x{x_and_s.shape[3]} "
                f"does not match configured image_size {cfg.image_size}"
            )
        h = self.trunk(x_and_s)
        return DiscriminatorOutput(self.src_conv(h), self.cls_fc(h.flatten(1)))

    def score_concat(self, x_and_s):
        """Critic patch scores only; the gradient-penalty target function."""
        return self.forward_concat(x_and_s).src_map

    def layer_table(self):
        cfg = self.cfg
        rows = []
        size = cfg.image_size
        for m in self.trunk:
            if isinstance(m, nn.Conv2d):
                out_size = size // 2
                rows.append(LayerRow("hidden", "Conv+Leaky ReLU",
                                     (size, size, m.in_channels),
                                     (out_size, out_size, m.out_channels),
                                     tuple(m.kernel_size), m.stride[0], m.padding[0]))
                size = out_size
        rows.append(LayerRow("output", "Output Layer:Conv",
                             (size, size, self.src_conv.in_channels),
                             (size, size, 1),
                             tuple(self.src_conv.kernel_size), 1, self.src_conv.padding[0]))
        rows.append(LayerRow("output", "Output Layer:FC",
                             (size, size, cfg.top_channels),
                             (cfg.num_attributes,),
                             None, None, None))
        return rows


def build_models(gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, seed=0):
    """Construct and initialize a generator/discriminator pair.

    The two networks get decorrelated init streams derived from ``seed``.
    """
    if gen_cfg.image_size != disc_cfg.image_size:
        raise ConfigurationError(
            f"generator image_size {gen_cfg.image_size} != discriminator image_size {disc_cfg.image_size}"
        )
    generator = init_weights(Generator(gen_cfg), seed=seed)
    discriminator = init_weights(Discriminator(disc_cfg), seed=seed + 1)
    return generator, discriminator
