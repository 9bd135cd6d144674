import random

import numpy as np
import pytest
import torch
from PIL import Image

from mrjl.toydata import make_toy_corpus
from mrjl.trainer import TrainConfig, train


@pytest.fixture(autouse=True, scope="session")
def _single_thread():
    torch.set_num_threads(1)


def write_png(path, size_hw=(24, 12), seed=0, constant=None):
    """Small random (or constant) RGB file for data-layer tests."""
    rng = np.random.default_rng(seed)
    h, w = size_hw
    if constant is not None:
        arr = np.full((h, w, 3), constant, dtype=np.uint8)
    else:
        arr = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


@pytest.fixture
def flat_corpus(tmp_path):
    """Two-camera corpus with disjoint train/test identities (small files)."""
    root = tmp_path / "corpus"
    seed = 0
    for identity in range(4):
        for camera in (0, 1):
            for idx in range(2):
                write_png(root / "train" / f"{identity}_{camera}_{idx}.png", seed=seed)
                seed += 1
    for identity in range(4, 7):
        for idx in range(2):
            write_png(root / "gallery" / f"{identity}_0_{idx}.png", seed=seed)
            seed += 1
            write_png(root / "query" / f"{identity}_1_{idx}.png", seed=seed)
            seed += 1
    return root


def micro_train_config(**overrides):
    """Smallest train config that still exercises every code path."""
    base = dict(
        epochs=2, seed=11,
        rrn_channels=(4, 8), rrn_strides=(2, 2), rrn_decoder_channels=(4, 4),
        rrn_skip_taps=(1, None), rrn_attention_channels=4,
        backbone="stub", stub_channels=(4, 8, 8, 8), stub_strides=(2, 2, 2, 2),
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy") / "data"
    make_toy_corpus(root, num_identities=6, images_per_identity=3, seed=7)
    return root


@pytest.fixture(scope="session")
def micro_run(tmp_path_factory, toy_root):
    """A short real training run shared by eval/CLI tests."""
    out = tmp_path_factory.mktemp("run")
    config = micro_train_config()
    ckpt_path = train(config, toy_root, out)
    return {"root": toy_root, "out": out, "checkpoint": ckpt_path, "config": config}


@pytest.fixture
def rng():
    return random.Random(1234)
