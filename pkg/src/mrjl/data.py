"""Identity-labelled image corpora: on-disk layout, manifests, MLR synthesis.

Expected layout::

    root/
      train/<identity>_<camera>_<index>.<ext>
      gallery/<identity>_<camera>_<index>.<ext>
      query/<identity>_<camera>_<index>.<ext>

A corpus manifest is a line-oriented UTF-8 text file (LF endings), one
record per image::

    relative_path<TAB>identity<TAB>camera<TAB>split<TAB>resolution_tag<TAB>r

MLR synthesis rewrites the images of one designated camera with a random
down-sampling rate r in {2, 3, 4} (down-sample at native size, resize back),
leaves every other camera untouched, and records each chosen r in the
manifest so a synthesis run can be replayed exactly.
"""

from __future__ import annotations

import dataclasses
import random
import shutil
from pathlib import Path
from typing import Iterable, Sequence

from PIL import Image

from . import images
from .errors import ConfigurationError, DataError, IngestionError

SPLITS = ("train", "gallery", "query")
IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}


@dataclasses.dataclass
class ImageRecord:
    """One labelled image: where it lives and what it is."""

    path: str            # relative to the corpus root
    identity: int
    camera: int
    split: str           # train | gallery | query
    tag: str = images.TAG_HR
    rate: int = 1

    def filename(self) -> str:
        return Path(self.path).name


def parse_record_name(rel_path: str, split: str) -> ImageRecord:
    """Parse `<identity>_<camera>_<index>.<ext>` into a record."""
    stem = Path(rel_path).stem
    parts = stem.split("_")
    if len(parts) < 3:
        raise IngestionError(
            f"cannot parse image name {rel_path!r} "
            "(expected <identity>_<camera>_<index>.<ext>)",
            paths=[rel_path],
        )
    try:
        identity, camera = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise IngestionError(
            f"non-integer identity/camera in image name {rel_path!r}", paths=[rel_path]
        ) from exc
    if identity < 0:
        raise IngestionError(f"negative identity in {rel_path!r}", paths=[rel_path])
    return ImageRecord(path=rel_path, identity=identity, camera=camera, split=split)


def scan_corpus(root: str | Path, splits: Sequence[str] = SPLITS) -> list[ImageRecord]:
    """Scan a corpus root and return records sorted by (split, path)."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"corpus root {root} is not a directory")
    records = []
    for split in splits:
        split_dir = root / split
        if not split_dir.is_dir():
            continue
        for p in sorted(split_dir.rglob("*")):
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS:
                rel = str(p.relative_to(root))
                records.append(parse_record_name(rel, split))
    if not records:
        raise DataError(f"no images found under {root} (looked in {', '.join(splits)})")
    return records


def validate_corpus(records: Iterable[ImageRecord], allow_train_test_overlap: bool = False) -> None:
    """Check the train/test identity disjointness convention.

    Self-retrieval protocols (toy overfit runs) intentionally evaluate on
    training identities; they pass allow_train_test_overlap=True.
    """
    train_ids = {r.identity for r in records if r.split == "train"}
    test_ids = {r.identity for r in records if r.split in ("gallery", "query")}
    overlap = train_ids & test_ids
    if overlap and not allow_train_test_overlap:
        raise DataError(
            f"train and test splits share {len(overlap)} identities "
            f"(e.g. {sorted(overlap)[:5]}); pass allow_train_test_overlap for "
            "self-retrieval protocols"
        )


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------

def write_manifest(records: Sequence[ImageRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"{r.path}\t{r.identity}\t{r.camera}\t{r.split}\t{r.tag}\t{r.rate}"
        for r in records
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_manifest(path: str | Path) -> list[ImageRecord]:
    path = Path(path)
    records = []
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read manifest {path}: {exc}", paths=[str(path)]) from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise IngestionError(
                f"{path}:{lineno}: expected 6 tab-separated fields, got {len(fields)}",
                paths=[str(path)],
            )
        rel, identity, camera, split, tag, rate = fields
        if split not in SPLITS:
            raise IngestionError(f"{path}:{lineno}: unknown split {split!r}", paths=[str(path)])
        if tag not in images.VALID_TAGS:
            raise IngestionError(f"{path}:{lineno}: unknown tag {tag!r}", paths=[str(path)])
        records.append(
            ImageRecord(rel, int(identity), int(camera), split, tag, int(rate))
        )
    return records


# ---------------------------------------------------------------------------
# MLR synthesis
# ---------------------------------------------------------------------------

def _downsample_file(src: Path, dst: Path, rate: int) -> None:
    """Down-sample an image file at its native size and resize back (PNG out)."""
    try:
        with Image.open(src) as img:
            tensor = images.to_tensor(img)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read image {src}: {exc}", paths=[str(src)]) from exc
    out = images.downsample_resize(images.ImageTensor(tensor, images.TAG_HR), rate)
    dst.parent.mkdir(parents=True, exist_ok=True)
    images.save_image(out, dst)


def synthesize_mlr(
    root: str | Path,
    lr_camera: int,
    seed: int,
    out_dir: str | Path,
    rates: Sequence[int] = images.LR_RATES,
    rate_override: int | None = None,
    replay_manifest: Sequence[ImageRecord] | None = None,
) -> list[ImageRecord]:
    """Build a multi-low-resolution corpus from an all-HR corpus.

    Images of `lr_camera` are rewritten with a per-image rate drawn uniformly
    from `rates`; images of every other camera are copied byte-identically.
    Returns the manifest records (also written to out_dir/manifest.tsv).

    rate_override forces one rate for every designated image (rate 1 keeps the
    file bit-identical). replay_manifest reuses the per-image rates of an
    earlier run instead of drawing new ones.
    """
    root, out_dir = Path(root), Path(out_dir)
    corpus = scan_corpus(root)
    cameras = {r.camera for r in corpus}
    if len(cameras) < 2:
        raise ConfigurationError(
            f"MLR synthesis needs at least 2 cameras, corpus has {sorted(cameras)}"
        )
    if lr_camera not in cameras:
        raise ConfigurationError(f"designated camera {lr_camera} not present in {sorted(cameras)}")

    replay_rates = None
    if replay_manifest is not None:
        replay_rates = {r.path: r.rate for r in replay_manifest}

    rng = random.Random(seed)
    manifest = []
    for rec in corpus:  # scan_corpus order is deterministic
        src = root / rec.path
        if rec.camera != lr_camera:
            dst = out_dir / rec.path
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, dst)
            manifest.append(dataclasses.replace(rec, tag=images.TAG_HR, rate=1))
            continue

        if rate_override is not None:
            rate = rate_override
        elif replay_rates is not None:
            if rec.path not in replay_rates:
                raise DataError(f"replay manifest has no entry for {rec.path}")
            rate = replay_rates[rec.path]
        else:
            rate = rng.choice(list(rates))

        if rate == 1:
            dst = out_dir / rec.path
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, dst)
            manifest.append(dataclasses.replace(rec, tag=images.TAG_HR, rate=1))
        else:
            rel = str(Path(rec.path).with_suffix(".png"))
            _downsample_file(src, out_dir / rel, rate)
            manifest.append(
                dataclasses.replace(rec, path=rel, tag=images.lr_tag(rate), rate=rate)
            )

    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest


def load_or_scan(root: str | Path) -> list[ImageRecord]:
    """Records from root/manifest.tsv if present, else a filename scan."""
    root = Path(root)
    manifest = root / "manifest.tsv"
    if manifest.is_file():
        return read_manifest(manifest)
    return scan_corpus(root)
