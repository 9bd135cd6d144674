"""Procedural toy corpus: colored-shape "persons" for desk-scale runs.

Each identity is a distinct hue/shape combination drawn with per-image jitter
in position, size, and brightness over a noisy background. The train and
gallery splits hold the full-resolution images (camera 0); the query split
holds down-sampled copies (camera 1) so self-retrieval works under the
standard camera-filtering protocol. Identities overlap between train and
test on purpose: this corpus exists for overfit/self-retrieval checks.
"""

from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import images
from .data import ImageRecord, write_manifest

SHAPES = ("rectangle", "ellipse", "triangle", "cross")


def _draw_person(identity: int, num_identities: int, rng: np.random.Generator,
                 size: tuple[int, int]) -> Image.Image:
    h, w = size
    hue = identity / max(1, num_identities)
    base = colorsys.hsv_to_rgb(hue, 0.9, 0.55 + 0.4 * rng.random())
    color = tuple(int(c * 255) for c in base)
    shape = SHAPES[identity % len(SHAPES)]

    noise = np.clip(rng.normal(30, 110, size=(h, w, 3)), 0, 255).astype(np.uint8)
    img = Image.fromarray(noise)
    draw = ImageDraw.Draw(img)

    cx = w * (0.5 + 0.15 * (rng.random() - 0.5))
    cy = h * (0.5 + 0.15 * (rng.random() - 0.5))
    rx = w * (0.28 + 0.08 * rng.random())
    ry = h * (0.28 + 0.08 * rng.random())
    box = (cx - rx, cy - ry, cx + rx, cy + ry)

    if shape == "rectangle":
        draw.rectangle(box, fill=color)
    elif shape == "ellipse":
        draw.ellipse(box, fill=color)
    elif shape == "triangle":
        draw.polygon([(cx, cy - ry), (cx - rx, cy + ry), (cx + rx, cy + ry)], fill=color)
    else:
        bar = max(3, int(min(rx, ry) * 0.5))
        draw.rectangle((cx - bar, cy - ry, cx + bar, cy + ry), fill=color)
        draw.rectangle((cx - rx, cy - bar, cx + rx, cy + bar), fill=color)

    # A secondary mark so images of one identity are not near-duplicates.
    mark_r = max(2, int(min(h, w) * 0.06))
    mx = rng.uniform(mark_r, w - mark_r)
    my = rng.uniform(mark_r, h - mark_r)
    mark_color = tuple(int(c * 255) for c in colorsys.hsv_to_rgb((hue + 0.5) % 1.0, 0.8, 0.9))
    draw.ellipse((mx - mark_r, my - mark_r, mx + mark_r, my + mark_r), fill=mark_color)
    return img


def make_toy_corpus(root: str | Path, num_identities: int = 8,
                    images_per_identity: int = 4, seed: int = 0,
                    size: tuple[int, int] = (images.IMAGE_HEIGHT, images.IMAGE_WIDTH),
                    query_rates: tuple[int, ...] = (2, 3, 4)) -> list[ImageRecord]:
    """Write the corpus under root and return its manifest records."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    records = []

    for identity in range(num_identities):
        for idx in range(images_per_identity):
            img = _draw_person(identity, num_identities, rng, size)
            tensor = images.to_tensor(img)

            train_rel = f"train/{identity}_0_{idx}.png"
            images.save_image(tensor, root / train_rel)
            records.append(ImageRecord(train_rel, identity, 0, "train"))

            gallery_rel = f"gallery/{identity}_0_{idx}.png"
            images.save_image(tensor, root / gallery_rel)
            records.append(ImageRecord(gallery_rel, identity, 0, "gallery"))

            rate = query_rates[(identity * images_per_identity + idx) % len(query_rates)]
            lowres = images.downsample_resize(
                images.ImageTensor(tensor, images.TAG_HR), rate)
            query_rel = f"query/{identity}_1_{idx}.png"
            images.save_image(lowres, root / query_rel)
            records.append(ImageRecord(query_rel, identity, 1, "query",
                                       tag=lowres.tag, rate=rate))

    write_manifest(records, root / "manifest.tsv")
    return records
