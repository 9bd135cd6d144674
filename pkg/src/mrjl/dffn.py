"""Dual-branch stripe-based feature extraction.

Each branch runs a backbone over a 3x256x128 image, splits the resulting
activation map into 4 equal-height horizontal stripes, average-pools each
stripe and projects it with a 1x1 conv to a 256-dim local sub-feature; the
whole map is pooled and projected to a 512-dim global sub-feature. Per image
that yields 4*256 + 512 = 1536 dims. The HR branch and the LR branch are
structurally identical but never share weights, and the retrieval feature is
their concatenation (3072 dims).
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError
from .images import ImageTensor, IMAGE_HEIGHT, IMAGE_WIDTH

NUM_STRIPES = 4
LOCAL_DIM = 256
GLOBAL_DIM = 512
BRANCH_DIM = NUM_STRIPES * LOCAL_DIM + GLOBAL_DIM   # 1536
JOINT_DIM = 2 * BRANCH_DIM                          # 3072


@dataclasses.dataclass(frozen=True)
class BranchConfig:
    """Backbone selection for one feature branch.

    "resnet50" is the full-scale backbone (final stage stride reduced to 1 so
    the activation height stays divisible by 4); "stub" is a small conv stack
    for tests and desk-scale runs.
    """

    backbone: str = "resnet50"
    stub_channels: tuple[int, ...] = (16, 32, 64, 64)
    stub_strides: tuple[int, ...] = (2, 2, 2, 2)
    input_hw: tuple[int, int] = (IMAGE_HEIGHT, IMAGE_WIDTH)

    @classmethod
    def stub(cls, channels=(16, 32, 64, 64), strides=(2, 2, 2, 2),
             input_hw=(IMAGE_HEIGHT, IMAGE_WIDTH)) -> "BranchConfig":
        return cls(backbone="stub", stub_channels=tuple(channels),
                   stub_strides=tuple(strides), input_hw=tuple(input_hw))


class StubBackbone(nn.Module):
    """Plain conv+ReLU stack; small enough for finite-difference checks."""

    def __init__(self, channels: Sequence[int], strides: Sequence[int]):
        super().__init__()
        if len(channels) != len(strides) or not channels:
            raise ConfigurationError("stub backbone needs equal-length channels/strides")
        convs = []
        in_ch = 3
        for out_ch, stride in zip(channels, strides):
            convs.append(nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        self.out_channels = in_ch
        self.total_stride = 1
        for s in strides:
            self.total_stride *= s

    def forward(self, x):
        for conv in self.convs:
            x = F.relu(conv(x))
        return x


class ResNet50Backbone(nn.Module):
    """ResNet-50 trunk with the final stage stride reduced to 1."""

    def __init__(self):
        super().__init__()
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        net.layer4[0].conv2.stride = (1, 1)
        net.layer4[0].downsample[0].stride = (1, 1)
        self.trunk = nn.Sequential(
            net.conv1, net.bn1, net.relu, net.maxpool,
            net.layer1, net.layer2, net.layer3, net.layer4,
        )
        self.out_channels = 2048
        self.total_stride = 16

    def forward(self, x):
        return self.trunk(x)


def build_backbone(config: BranchConfig) -> nn.Module:
    if config.backbone == "resnet50":
        return ResNet50Backbone()
    if config.backbone == "stub":
        return StubBackbone(config.stub_channels, config.stub_strides)
    raise ConfigurationError(f"unknown backbone {config.backbone!r}")


@dataclasses.dataclass
class FeatureRepresentation:
    """Per-branch feature of one image: 4 local parts plus a global part."""

    locals: tuple[torch.Tensor, ...]   # 4 tensors of 256 dims
    global_part: torch.Tensor          # 512 dims
    branch: str                        # "HR" | "LR"

    @property
    def vector(self) -> torch.Tensor:
        return torch.cat([*self.locals, self.global_part])

    def validate(self) -> "FeatureRepresentation":
        if len(self.locals) != NUM_STRIPES or any(f.shape != (LOCAL_DIM,) for f in self.locals):
            raise ValueError("expected 4 local parts of 256 dims")
        if self.global_part.shape != (GLOBAL_DIM,):
            raise ValueError("expected a 512-dim global part")
        if not all(torch.isfinite(f).all() for f in (*self.locals, self.global_part)):
            raise ValueError("non-finite feature values")
        return self


def _embed_block(in_ch: int, out_dim: int) -> nn.Sequential:
    # 1x1 conv on a pooled 1x1 map, then BN + ReLU (the retrieval feature is
    # taken after this block, before any classifier head).
    return nn.Sequential(nn.Conv2d(in_ch, out_dim, 1), nn.BatchNorm2d(out_dim), nn.ReLU())


class FeatureExtractor(nn.Module):
    """One branch: backbone -> 4 stripe embeddings + 1 global embedding."""

    def __init__(self, config: BranchConfig | None = None):
        super().__init__()
        self.config = config or BranchConfig()
        self.backbone = build_backbone(self.config)

        h, w = self.config.input_hw
        stride = self.backbone.total_stride
        if h % stride or (h // stride) % NUM_STRIPES:
            raise ConfigurationError(
                f"backbone output height {h}/{stride} is not divisible by "
                f"{NUM_STRIPES} stripes (input height {h})"
            )
        self.map_hw = (h // stride, max(1, w // stride))

        c = self.backbone.out_channels
        self.local_embeds = nn.ModuleList(_embed_block(c, LOCAL_DIM) for _ in range(NUM_STRIPES))
        self.global_embed = _embed_block(c, GLOBAL_DIM)

    def parts_from_activation(self, act: torch.Tensor) -> list[torch.Tensor]:
        """Split a backbone activation into the 5 embedded sub-features.

        act: (B, C, h, w) with h divisible by 4. Returns [f1..f4, f5] where
        stripe 1 is the top quarter of the map.
        """
        if act.shape[2] % NUM_STRIPES:
            raise ConfigurationError(
                f"activation height {act.shape[2]} not divisible by {NUM_STRIPES}"
            )
        stripe_h = act.shape[2] // NUM_STRIPES
        parts = []
        for i in range(NUM_STRIPES):
            stripe = act[:, :, i * stripe_h:(i + 1) * stripe_h, :]
            pooled = stripe.mean(dim=(2, 3), keepdim=True)          # (B, C, 1, 1)
            parts.append(self.local_embeds[i](pooled).flatten(1))   # (B, 256)
        pooled = act.mean(dim=(2, 3), keepdim=True)
        parts.append(self.global_embed(pooled).flatten(1))          # (B, 512)
        return parts

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        return self.parts_from_activation(self.backbone(x))

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, 1536) concatenated branch feature."""
        return torch.cat(self.forward(x), dim=1)


class DFFN(nn.Module):
    """HR branch + LR branch; independent parameters, shared structure."""

    def __init__(self, config: BranchConfig | None = None):
        super().__init__()
        self.config = config or BranchConfig()
        self.hr = FeatureExtractor(self.config)
        self.lr = FeatureExtractor(self.config)

    def branch(self, name: str) -> FeatureExtractor:
        if name not in ("hr", "lr"):
            raise ValueError(f"branch must be 'hr' or 'lr', got {name!r}")
        return self.hr if name == "hr" else self.lr

    def joint_features(self, hr_imgs: torch.Tensor, lr_imgs: torch.Tensor) -> torch.Tensor:
        """Batched joint feature: (B, 3072), HR dims first."""
        return torch.cat([self.hr.features(hr_imgs), self.lr.features(lr_imgs)], dim=1)


def extract_branch(img: ImageTensor, extractor: FeatureExtractor,
                   branch: str) -> FeatureRepresentation:
    """Single-image inference (runs the branch in eval mode)."""
    was_training = extractor.training
    extractor.eval()
    try:
        with torch.no_grad():
            parts = extractor(img.data.unsqueeze(0))
    finally:
        extractor.train(was_training)
    return FeatureRepresentation(
        locals=tuple(p.squeeze(0) for p in parts[:NUM_STRIPES]),
        global_part=parts[NUM_STRIPES].squeeze(0),
        branch=branch.upper(),
    ).validate()


def extract_joint(pair, model: DFFN) -> torch.Tensor:
    """Joint feature (3072,) of one reconstruction pair (eval mode)."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            joint = model.joint_features(
                pair.x_hr_hat.data.unsqueeze(0), pair.x_lr_hat.data.unsqueeze(0)
            ).squeeze(0)
    finally:
        model.train(was_training)
    return joint


class ClassifierHeads(nn.Module):
    """10 independent linear heads: one per sub-feature per branch."""

    def __init__(self, num_classes: int):
        super().__init__()
        if num_classes < 2:
            raise ConfigurationError(f"need at least 2 identity classes, got {num_classes}")
        self.num_classes = num_classes
        dims = [LOCAL_DIM] * NUM_STRIPES + [GLOBAL_DIM]
        self.hr_heads = nn.ModuleList(nn.Linear(d, num_classes) for d in dims)
        self.lr_heads = nn.ModuleList(nn.Linear(d, num_classes) for d in dims)

    def forward(self, parts: Sequence[torch.Tensor], branch: str) -> list[torch.Tensor]:
        heads = self.hr_heads if branch == "hr" else self.lr_heads
        return [head(p) for head, p in zip(heads, parts)]


def feature_response_map(img: ImageTensor, extractor: FeatureExtractor) -> torch.Tensor:
    """Channel-summed backbone activation, min-max normalized, input-sized.

    Returns an (H, W) tensor in [0, 1]; a constant activation maps to zeros.
    """
    with torch.no_grad():
        act = extractor.backbone(img.data.unsqueeze(0))
        heat = act.sum(dim=1, keepdim=True)           # (1, 1, h, w)
        lo, hi = heat.min(), heat.max()
        heat = (heat - lo) / (hi - lo) if hi > lo else torch.zeros_like(heat)
        heat = F.interpolate(heat, size=img.data.shape[-2:], mode="bilinear",
                             align_corners=False)
    return heat.squeeze(0).squeeze(0).clamp(0, 1)
