"""Paired photo/line-drawing data pipeline.

Discovers aligned (photo, drawing) pairs from two directories, splits them
into train/test, and converts images to normalized model tensors in [-1, 1].
"""

import csv
import json
import logging
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


class DataError(Exception):
    """Unrecoverable problem with the dataset on disk or the manifest."""


class Category(str, Enum):
    MALE = "Male"
    FEMALE = "Female"
    CARTOON_MALE = "CartoonMale"
    CARTOON_FEMALE = "CartoonFemale"
    OTHERS = "Others"


@dataclass
class ImagePair:
    """One aligned (photo, drawing) sample identified by a shared basename."""

    id: str
    photo_path: str
    drawing_path: str
    category: Category = Category.OTHERS


@dataclass
class DatasetManifest:
    """Ordered pair list plus an optional id -> {train|test} assignment."""

    pairs: list[ImagePair] = field(default_factory=list)
    split: dict[str, str] = field(default_factory=dict)
    seed: Optional[int] = None
    train_fraction: Optional[float] = None
    warnings: list[str] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.pairs)

    def ids(self) -> list[str]:
        return [p.id for p in self.pairs]

    def subset(self, which: str) -> list[ImagePair]:
        return [p for p in self.pairs if self.split.get(p.id) == which]

    def category_counts(self) -> dict[str, int]:
        counts = {c.value: 0 for c in Category}
        for p in self.pairs:
            counts[p.category.value] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "pairs": [
                {
                    "id": p.id,
                    "photo_path": p.photo_path,
                    "drawing_path": p.drawing_path,
                    "category": p.category.value,
                    "split": self.split.get(p.id),
                }
                for p in self.pairs
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetManifest":
        manifest = cls(seed=doc.get("seed"), train_fraction=doc.get("train_fraction"))
        for entry in doc["pairs"]:
            manifest.pairs.append(
                ImagePair(
                    id=entry["id"],
                    photo_path=entry["photo_path"],
                    drawing_path=entry["drawing_path"],
                    category=Category(entry.get("category", "Others")),
                )
            )
            if entry.get("split") is not None:
                manifest.split[entry["id"]] = entry["split"]
        return manifest

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class NormalizedPair:
    """Model-ready (photo, drawing) tensors, each 3xSxS in [-1, 1]."""

    photo_t: torch.Tensor
    drawing_t: torch.Tensor
    size: int


def read_category_map(path) -> dict[str, Category]:
    """Read an id,category CSV. Unknown category names are a hard error."""
    mapping = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "category"} <= set(reader.fieldnames):
            raise DataError(f"category map {path} must have columns id,category")
        for row in reader:
            try:
                mapping[row["id"]] = Category(row["category"])
            except ValueError:
                raise DataError(
                    f"unknown category {row['category']!r} for id {row['id']!r}; "
                    f"expected one of {[c.value for c in Category]}"
                )
    return mapping


def _index_dir(directory: Path) -> dict[str, Path]:
    """Map file stem -> path for image files, first in sorted order wins."""
    index: dict[str, Path] = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() not in IMAGE_EXTENSIONS or not p.is_file():
            continue
        if p.stem in index:
            logger.warning("duplicate basename %r in %s, keeping %s", p.stem, directory, index[p.stem].name)
            continue
        index[p.stem] = p
    return index


def scan_pairs(photo_dir, drawing_dir, category_map=None) -> DatasetManifest:
    """Build a manifest from two directories matched by file basename.

    Files present in only one directory are skipped with a warning record;
    a photo/drawing dimension mismatch is a hard error naming the id.
    """
    photo_dir, drawing_dir = Path(photo_dir), Path(drawing_dir)
    for d in (photo_dir, drawing_dir):
        if not d.is_dir():
            raise DataError(f"directory does not exist: {d}")
    categories = read_category_map(category_map) if category_map else {}

    photos = _index_dir(photo_dir)
    drawings = _index_dir(drawing_dir)
    manifest = DatasetManifest()
    for stem in sorted(set(photos) | set(drawings)):
        if stem not in photos or stem not in drawings:
            missing = "drawing" if stem in photos else "photo"
            msg = f"pair {stem!r} skipped: no matching {missing}"
            manifest.warnings.append(msg)
            logger.warning(msg)
            continue
        with Image.open(photos[stem]) as ph, Image.open(drawings[stem]) as dr:
            if ph.size != dr.size:
                raise DataError(
                    f"dimension mismatch for pair {stem!r}: photo {ph.size} vs drawing {dr.size}"
                )
        manifest.pairs.append(
            ImagePair(
                id=stem,
                photo_path=str(photos[stem]),
                drawing_path=str(drawings[stem]),
                category=categories.get(stem, Category.OTHERS),
            )
        )
    return manifest


def split_dataset(manifest: DatasetManifest, train_fraction: float, seed: int) -> DatasetManifest:
    """Seeded uniform shuffle then prefix split; |train| = floor(fraction * N)."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(manifest) == 0:
        raise DataError("empty manifest")
    ids = manifest.ids()
    random.Random(seed).shuffle(ids)
    n_train = int(math.floor(train_fraction * len(ids)))
    split = {pid: ("train" if i < n_train else "test") for i, pid in enumerate(ids)}
    return DatasetManifest(
        pairs=list(manifest.pairs),
        split=split,
        seed=seed,
        train_fraction=train_fraction,
        warnings=list(manifest.warnings),
    )


def _check_size(size: int) -> None:
    if size < 32 or size % 32 != 0:
        raise DataError(f"image size must be >= 32 and divisible by 32, got {size}")


def load_image_rgb(path) -> Image.Image:
    with Image.open(path) as img:
        return img.convert("RGB")


def normalize_image(img: Image.Image, size: int) -> torch.Tensor:
    """Bilinear resize to size x size, then map bytes x -> x/127.5 - 1."""
    _check_size(size)
    if img.width != img.height:
        logger.warning("non-square input %dx%d will be distorted by the square resize", img.width, img.height)
    resized = img.resize((size, size), Image.BILINEAR)
    arr = np.asarray(resized, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def preprocess(pair: ImagePair, size: int) -> NormalizedPair:
    """Load, resize and normalize both sides of a pair to 3xSxS in [-1, 1]."""
    _check_size(size)
    photo = normalize_image(load_image_rgb(pair.photo_path), size)
    drawing = normalize_image(load_image_rgb(pair.drawing_path), size)
    return NormalizedPair(photo_t=photo, drawing_t=drawing, size=size)


def denormalize(t: torch.Tensor) -> np.ndarray:
    """Map a [-1, 1] CxHxW tensor back to an HxWxC uint8 image.

    Values are clipped first; quantization rounds half up so that 0.0 -> 128.
    """
    arr = t.detach().cpu().numpy()
    if arr.ndim != 3:
        raise ValueError(f"expected CxHxW tensor, got shape {tuple(arr.shape)}")
    arr = np.clip(arr, -1.0, 1.0)
    bytes_ = np.floor((arr + 1.0) * 127.5 + 0.5)
    return np.clip(bytes_, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def save_png(t: torch.Tensor, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(denormalize(t)).save(path, format="PNG")


class PairedImages:
    """Lazy accessor yielding NormalizedPair for a manifest subset."""

    def __init__(self, manifest: DatasetManifest, which: str, size: int):
        _check_size(size)
        self.items = manifest.subset(which) if manifest.split else list(manifest.pairs)
        self.size = size

    def __len__(self):
        return len(self.items)

    def __getitem__(self, idx: int) -> NormalizedPair:
        return preprocess(self.items[idx], self.size)
