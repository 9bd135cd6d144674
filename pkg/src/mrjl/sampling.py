"""Training-batch construction.

A mini-batch holds 5 persons with 4 base images each (20 total): 2 HR images
per person, each expanded into its 3 down-sampled variants for reconstruction
training, plus 2 original LR images that only ever feed the re-ID branch
(never the reconstruction losses). Identities missing original LR images get
synthesized stand-ins so the batch structure survives HR-only corpora.
"""

from __future__ import annotations

import dataclasses
import random
from pathlib import Path
from typing import Sequence

import torch

from . import images
from .data import ImageRecord
from .errors import DatasetError


@dataclasses.dataclass
class MultiResolutionSample:
    """One HR training image together with its three LR variants."""

    hr: images.ImageTensor
    lr_variants: tuple[images.ImageTensor, ...]   # rates 2, 3, 4 in order
    identity: int

    def variant(self, rate: int) -> images.ImageTensor:
        for v in self.lr_variants:
            if images.rate_of_tag(v.tag) == rate:
                return v
        raise ValueError(f"no LR variant with rate {rate}")


@dataclasses.dataclass
class LRItem:
    """An original-LR batch item (or a synthesized stand-in for one)."""

    image: images.ImageTensor
    identity: int
    synthetic: bool = False
    dffn_only: bool = True   # original LR never enters reconstruction losses


@dataclasses.dataclass
class PersonGroup:
    identity: int
    samples: list[MultiResolutionSample]   # 2 HR-derived samples
    lr_items: list[LRItem]                 # 2 original-LR items


@dataclasses.dataclass
class MiniBatch:
    groups: list[PersonGroup]

    @property
    def identities(self) -> list[int]:
        return [g.identity for g in self.groups]

    def base_images(self) -> tuple[list[images.ImageTensor], list[int], list[bool]]:
        """The 20 base images with labels and their dffn-only flags.

        Order per group: hr, hr, lr, lr.
        """
        imgs, labels, dffn_only = [], [], []
        for g in self.groups:
            for s in g.samples:
                imgs.append(s.hr)
                labels.append(g.identity)
                dffn_only.append(False)
            for item in g.lr_items:
                imgs.append(item.image)
                labels.append(g.identity)
                dffn_only.append(True)
        return imgs, labels, dffn_only

    def validate(self, persons: int = 5) -> "MiniBatch":
        if len(self.groups) != persons:
            raise ValueError(f"expected {persons} identity groups, got {len(self.groups)}")
        ids = self.identities
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate identities in batch: {ids}")
        for g in self.groups:
            if len(g.samples) != 2 or len(g.lr_items) != 2:
                raise ValueError("each group needs 2 HR samples and 2 LR items")
            for s in g.samples:
                if tuple(images.rate_of_tag(v.tag) for v in s.lr_variants) != images.LR_RATES:
                    raise ValueError("LR variants must carry rates (2, 3, 4) in order")
            for item in g.lr_items:
                if not item.dffn_only:
                    raise ValueError("original-LR items must be flagged dffn_only")
        return self


class ImageCache:
    """Loads corpus images at canonical size, memoized by relative path."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._cache: dict[str, images.ImageTensor] = {}

    def get(self, record: ImageRecord) -> images.ImageTensor:
        img = self._cache.get(record.path)
        if img is None:
            img = images.load_image(self.root / record.path, tag=record.tag)
            self._cache[record.path] = img
        return img.retagged(record.tag)


def make_mlr_sample(hr: images.ImageTensor, identity: int) -> MultiResolutionSample:
    variants = tuple(images.downsample_resize(hr, r) for r in images.LR_RATES)
    return MultiResolutionSample(hr=hr.retagged(images.TAG_HR), lr_variants=variants,
                                 identity=identity)


class MiniBatchSampler:
    """Draws the 5-person, 20-image batches from a train split.

    An identity is trainable when it has at least 2 HR images; original LR
    slots fall back to synthesized down-sampled copies when the identity has
    fewer than 2 original LR images. The sampler owns a private RNG whose
    state is checkpointable, so a fixed seed reproduces the batch stream.
    """

    def __init__(self, records: Sequence[ImageRecord], root: str | Path,
                 persons: int = 5, seed: int = 0):
        self.persons = persons
        self.cache = ImageCache(root)
        self.rng = random.Random(seed)

        self.hr_pool: dict[int, list[ImageRecord]] = {}
        self.lr_pool: dict[int, list[ImageRecord]] = {}
        for rec in records:
            if rec.split != "train":
                continue
            pool = self.hr_pool if rec.tag == images.TAG_HR else self.lr_pool
            pool.setdefault(rec.identity, []).append(rec)
        for pool in (self.hr_pool, self.lr_pool):
            for recs in pool.values():
                recs.sort(key=lambda r: r.path)

        self.classes = sorted(i for i, recs in self.hr_pool.items() if len(recs) >= 2)
        if len(self.classes) < persons:
            raise DatasetError(
                f"need at least {persons} identities with >= 2 HR images, "
                f"found {len(self.classes)}"
            )
        self.class_index = {identity: k for k, identity in enumerate(self.classes)}

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def batches_per_epoch(self) -> int:
        return -(-len(self.classes) // self.persons)   # ceil division

    def get_state(self):
        return self.rng.getstate()

    def set_state(self, state) -> None:
        self.rng.setstate(state)

    def _lr_items(self, identity: int) -> list[LRItem]:
        items = []
        pool = self.lr_pool.get(identity, [])
        if len(pool) >= 2:
            picked = self.rng.sample(pool, 2)
        else:
            picked = list(pool)
        for rec in picked:
            items.append(LRItem(self.cache.get(rec), identity))
        while len(items) < 2:
            hr_rec = self.rng.choice(self.hr_pool[identity])
            rate = self.rng.choice(images.LR_RATES)
            img = images.downsample_resize(self.cache.get(hr_rec), rate)
            items.append(LRItem(img, identity, synthetic=True))
        return items

    def sample(self) -> MiniBatch:
        ids = self.rng.sample(self.classes, self.persons)
        groups = []
        for identity in ids:
            hr_recs = self.rng.sample(self.hr_pool[identity], 2)
            samples = [make_mlr_sample(self.cache.get(r), identity) for r in hr_recs]
            groups.append(PersonGroup(identity, samples, self._lr_items(identity)))
        return MiniBatch(groups).validate(self.persons)


def stack(imgs: Sequence[images.ImageTensor]) -> torch.Tensor:
    return torch.stack([im.data for im in imgs])
