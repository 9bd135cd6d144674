"""Image tensors, resolution tags, and down-sample/resize-back synthesis.

Every image entering the networks is a float tensor of shape (3, 256, 128)
with values in [0, 1]. Low-resolution variants keep those pixel dimensions:
they are produced by bilinear down-sampling by an integer rate followed by
bilinear up-sampling back to the original size.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

# Canonical network input size (height, width).
IMAGE_HEIGHT = 256
IMAGE_WIDTH = 128

TAG_HR = "HR"
TAG_UNKNOWN = "UNKNOWN"
LR_RATES = (2, 3, 4)
VALID_TAGS = (TAG_HR, "LR2", "LR3", "LR4", TAG_UNKNOWN)


def lr_tag(rate: int) -> str:
    """Resolution tag for a given down-sampling rate (rate 1 keeps HR)."""
    if rate == 1:
        return TAG_HR
    if rate not in LR_RATES:
        raise ValueError(f"unsupported down-sampling rate {rate}")
    return f"LR{rate}"


def rate_of_tag(tag: str) -> int:
    if tag.startswith("LR"):
        return int(tag[2:])
    return 1


@dataclasses.dataclass
class ImageTensor:
    """A normalized 3-channel image with resolution metadata.

    data: float tensor (3, H, W) with values in [0, 1]
    tag:  one of HR, LR2, LR3, LR4, UNKNOWN
    """

    data: torch.Tensor
    tag: str = TAG_UNKNOWN

    def validate(self) -> "ImageTensor":
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) image data, got {tuple(self.data.shape)}")
        if self.tag not in VALID_TAGS:
            raise ValueError(f"unknown resolution tag {self.tag!r}")
        if not torch.isfinite(self.data).all():
            raise ValueError("image contains non-finite values")
        if self.data.min() < 0 or self.data.max() > 1:
            raise ValueError("image values must lie in [0, 1]")
        return self

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def retagged(self, tag: str) -> "ImageTensor":
        return ImageTensor(self.data, tag)


def to_tensor(img: Image.Image) -> torch.Tensor:
    """PIL image -> float tensor (3, H, W) in [0, 1]."""
    arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def to_pil(data: torch.Tensor) -> Image.Image:
    arr = (data.detach().clamp(0, 1) * 255.0).round().to(torch.uint8)
    return Image.fromarray(arr.permute(1, 2, 0).numpy())


def load_image(path: str | Path, size: tuple[int, int] | None = (IMAGE_HEIGHT, IMAGE_WIDTH),
               tag: str = TAG_UNKNOWN) -> ImageTensor:
    """Load an image file, optionally resizing to the canonical (H, W)."""
    from .errors import IngestionError

    path = Path(path)
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if size is not None and (img.height, img.width) != size:
                img = img.resize((size[1], size[0]), Image.BILINEAR)
            data = to_tensor(img)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read image {path}: {exc}", paths=[str(path)]) from exc
    return ImageTensor(data, tag)


def save_image(img: ImageTensor | torch.Tensor, path: str | Path) -> None:
    """Write an image as lossless PNG (8-bit)."""
    data = img.data if isinstance(img, ImageTensor) else img
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    to_pil(data).save(path, format="PNG")


def downsample_resize(img: ImageTensor, rate: int) -> ImageTensor:
    """Down-sample by `rate` (floored intermediate size) and resize back.

    rate 1 is the identity map and returns the input data unchanged.
    Both resampling steps are bilinear; the output is clamped to [0, 1]
    so interpolation round-off cannot leave the valid range.
    """
    if rate <= 0:
        raise ValueError(f"down-sampling rate must be positive, got {rate}")
    if rate == 1:
        return ImageTensor(img.data, img.tag)
    h, w = img.height, img.width
    small_h, small_w = max(1, h // rate), max(1, w // rate)
    x = img.data.unsqueeze(0)
    x = F.interpolate(x, size=(small_h, small_w), mode="bilinear", align_corners=False)
    x = F.interpolate(x, size=(h, w), mode="bilinear", align_corners=False)
    return ImageTensor(x.squeeze(0).clamp(0, 1), lr_tag(rate))


def downsample_resize_batch(batch: torch.Tensor, rate: int) -> torch.Tensor:
    """Batched variant of downsample_resize on a (B, 3, H, W) tensor."""
    if rate <= 0:
        raise ValueError(f"down-sampling rate must be positive, got {rate}")
    if rate == 1:
        return batch
    h, w = batch.shape[-2:]
    small = (max(1, h // rate), max(1, w // rate))
    x = F.interpolate(batch, size=small, mode="bilinear", align_corners=False)
    x = F.interpolate(x, size=(h, w), mode="bilinear", align_corners=False)
    return x.clamp(0, 1)
