"""Resolution reconstruction network.

An input image of any (unknown) resolution is encoded by three convolutional
perception branches with kernel sizes {1, 3, 5}; a fourth attention branch
produces one softmax-normalized weight per perception branch, and the encoder
output is the weighted sum of the branch outputs. Two structurally identical
but independently parameterized decoders then reconstruct a high-resolution
and a low-resolution version of the input at the original pixel size. Skip
connections from early encoder layers are added to the matching decoder
stages to preserve visual detail.
"""

from __future__ import annotations

import dataclasses
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, NumericFaultError
from .images import ImageTensor, TAG_UNKNOWN

# Two stride-2 deconvolutions per decoder: the encoder must shrink by 4x.
DECODER_UPSAMPLING = 4


@dataclasses.dataclass(frozen=True)
class RRNConfig:
    """Encoder/decoder topology.

    channels/strides describe each perception branch layer by layer (all
    branches share widths, only kernel sizes differ). skip_taps maps the two
    decoder stages (half resolution, full resolution) to the 1-based encoder
    layer whose output is added there, or None for no skip.
    """

    kernel_sizes: tuple[int, ...] = (1, 3, 5)
    channels: tuple[int, ...] = (32, 32, 64, 64, 128, 128, 128, 128)
    strides: tuple[int, ...] = (1, 2, 1, 1, 2, 1, 1, 1)
    decoder_channels: tuple[int, int] = (64, 32)
    skip_taps: tuple[int | None, int | None] = (4, 1)
    attention_channels: int = 16
    use_attention: bool = True

    def validate(self) -> "RRNConfig":
        if len(self.channels) != len(self.strides) or not self.channels:
            raise ConfigurationError("channels and strides must be equal-length, non-empty")
        if any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ConfigurationError(f"kernel sizes must be odd, got {self.kernel_sizes}")
        if self.use_attention and len(self.kernel_sizes) != 3:
            raise ConfigurationError("the multi-kernel encoder uses exactly 3 perception branches")
        if not self.use_attention and len(self.kernel_sizes) != 1:
            raise ConfigurationError("the single-branch encoder uses exactly 1 perception branch")
        if math.prod(self.strides) != DECODER_UPSAMPLING:
            raise ConfigurationError(
                f"encoder must downsample by exactly {DECODER_UPSAMPLING} "
                f"(got strides {self.strides})"
            )
        # Decoder stage s produces spatial size input/(2, 1)[s]; a tapped
        # encoder layer must match both that size and the stage's width.
        for stage, tap in enumerate(self.skip_taps):
            if tap is None:
                continue
            if not 1 <= tap <= len(self.channels):
                raise ConfigurationError(f"skip tap {tap} out of range")
            tap_shrink = math.prod(self.strides[:tap])
            if tap_shrink != (2, 1)[stage]:
                raise ConfigurationError(
                    f"skip tap {tap} has downsampling {tap_shrink}, decoder stage "
                    f"{stage + 1} needs {(2, 1)[stage]}"
                )
            if self.channels[tap - 1] != self.decoder_channels[stage]:
                raise ConfigurationError(
                    f"skip tap {tap} has {self.channels[tap - 1]} channels, decoder "
                    f"stage {stage + 1} has {self.decoder_channels[stage]}"
                )
        return self

    @property
    def out_channels(self) -> int:
        return self.channels[-1]

    @classmethod
    def single_branch(cls, **kw) -> "RRNConfig":
        """Ablation variant: one kernel-3 branch, no attention."""
        return cls(kernel_sizes=(3,), use_attention=False, **kw)

    @classmethod
    def toy(cls, single_branch: bool = False) -> "RRNConfig":
        """Small config for desk-scale training runs."""
        kw = dict(channels=(4, 8), strides=(2, 2), decoder_channels=(4, 4),
                  skip_taps=(1, None), attention_channels=8)
        return cls.single_branch(**kw) if single_branch else cls(**kw)

    @classmethod
    def stub(cls) -> "RRNConfig":
        """Miniature config for finite-difference gradient checks."""
        return cls(channels=(4, 4), strides=(2, 2), decoder_channels=(4, 4),
                   skip_taps=(1, None), attention_channels=4)


@dataclasses.dataclass
class ReconstructionPair:
    """HR and LR reconstructions of one input image."""

    x_hr_hat: ImageTensor
    x_lr_hat: ImageTensor


def _check_finite(t: torch.Tensor, layer: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericFaultError(f"non-finite activation after {layer}", layer=layer)
    return t


class PerceptionBranch(nn.Module):
    """A stack of same-kernel conv+ReLU layers; records tapped outputs."""

    def __init__(self, kernel: int, channels, strides):
        super().__init__()
        self.kernel = kernel
        convs = []
        in_ch = 3
        for out_ch, stride in zip(channels, strides):
            convs.append(nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)

    def forward(self, x, taps: frozenset[int] = frozenset()):
        tapped = {}
        for i, conv in enumerate(self.convs, start=1):
            x = F.relu(conv(x))
            _check_finite(x, f"branch_k{self.kernel}.conv{i}")
            if i in taps:
                tapped[i] = x
        return x, tapped


class AttentionBranch(nn.Module):
    """3 convs + batch norm + softmax -> one weight per perception branch.

    The weights are per-image scalars (global average pooling before the
    softmax), so the fused encoder output is a convex combination of the
    branch outputs.
    """

    def __init__(self, hidden: int, num_branches: int = 3):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv2d(3, hidden, 3, stride=2, padding=1),
            nn.Conv2d(hidden, hidden, 3, stride=2, padding=1),
            nn.Conv2d(hidden, num_branches, 1),
        ])
        self.bn = nn.BatchNorm2d(num_branches)

    def forward(self, x):
        x = F.relu(self.convs[0](x))
        x = F.relu(self.convs[1](x))
        x = self.convs[2](x)
        x = self.bn(x)
        _check_finite(x, "attention.bn")
        logits = x.mean(dim=(2, 3))          # (B, num_branches)
        return torch.softmax(logits, dim=1)


class MultiKernelEncoder(nn.Module):
    def __init__(self, config: RRNConfig):
        super().__init__()
        self.config = config.validate()
        self.branches = nn.ModuleList(
            PerceptionBranch(k, config.channels, config.strides)
            for k in config.kernel_sizes
        )
        self.attention = (
            AttentionBranch(config.attention_channels, len(config.kernel_sizes))
            if config.use_attention else None
        )
        self._taps = frozenset(t for t in config.skip_taps if t is not None)

    def forward(self, x):
        """Returns (fused feature map, per-stage skip tensors, attention weights)."""
        outs, taps = [], []
        for branch in self.branches:
            out, tapped = branch(x, self._taps)
            outs.append(out)
            taps.append(tapped)

        if self.attention is None:
            weights = None
            fused = outs[0]
            skips = [taps[0].get(t) if t is not None else None
                     for t in self.config.skip_taps]
        else:
            weights = self.attention(x)      # (B, 3), rows sum to 1
            w = weights[:, :, None, None, None]
            fused = (w * torch.stack(outs, dim=1)).sum(dim=1)
            skips = []
            for t in self.config.skip_taps:
                if t is None:
                    skips.append(None)
                else:
                    stacked = torch.stack([tp[t] for tp in taps], dim=1)
                    skips.append((w * stacked).sum(dim=1))
        return fused, skips, weights


class Decoder(nn.Module):
    """2 stride-2 deconvolutions and a final conv, sigmoid output in [0, 1]."""

    def __init__(self, config: RRNConfig, name: str):
        super().__init__()
        self.name = name
        d1, d2 = config.decoder_channels
        self.deconv1 = nn.ConvTranspose2d(config.out_channels, d1, 4, stride=2, padding=1)
        self.deconv2 = nn.ConvTranspose2d(d1, d2, 4, stride=2, padding=1)
        self.out_conv = nn.Conv2d(d2, 3, 3, padding=1)

    def _add_skip(self, x, skip, stage):
        if skip is None:
            return x
        if skip.shape != x.shape:
            raise ConfigurationError(
                f"{self.name} decoder stage {stage}: skip shape {tuple(skip.shape)} "
                f"does not match stage output {tuple(x.shape)}"
            )
        return x + skip

    def forward(self, feat, skips):
        x = F.relu(self.deconv1(feat))
        _check_finite(x, f"{self.name}_decoder.deconv1")
        x = self._add_skip(x, skips[0], 1)
        x = F.relu(self.deconv2(x))
        _check_finite(x, f"{self.name}_decoder.deconv2")
        x = self._add_skip(x, skips[1], 2)
        x = torch.sigmoid(self.out_conv(x))
        _check_finite(x, f"{self.name}_decoder.out_conv")
        return x


class RRN(nn.Module):
    """Encoder plus HR/LR decoders; decoders never share parameters."""

    def __init__(self, config: RRNConfig | None = None):
        super().__init__()
        self.config = (config or RRNConfig()).validate()
        self.encoder = MultiKernelEncoder(self.config)
        self.hr_decoder = Decoder(self.config, "hr")
        self.lr_decoder = Decoder(self.config, "lr")

    def encode(self, x: torch.Tensor):
        return self.encoder(x)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Batched reconstruction: (B, 3, H, W) -> (HR batch, LR batch)."""
        fused, skips, _ = self.encoder(x)
        return self.hr_decoder(fused, skips), self.lr_decoder(fused, skips)

    def reconstruct(self, img: ImageTensor) -> ReconstructionPair:
        """Single-image reconstruction; the resolution tag is never inspected.

        Runs in eval mode without gradients, so repeated calls on the same
        input are bit-identical and leave no side effects.
        """
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                hr, lr = self.forward(img.data.unsqueeze(0))
        finally:
            self.train(was_training)
        return ReconstructionPair(
            x_hr_hat=ImageTensor(hr.squeeze(0), TAG_UNKNOWN),
            x_lr_hat=ImageTensor(lr.squeeze(0), TAG_UNKNOWN),
        )


def num_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
