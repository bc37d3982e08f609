import numpy as np
import pytest
import torch
from PIL import Image, ImageDraw

from p2ld.data import DatasetManifest, ImagePair, split_dataset


def make_pair_images(root, n, size=64, seed=0):
    """Synthetic aligned pairs: colored shapes photo + black-outline drawing."""
    rng = np.random.default_rng(seed)
    photo_dir = root / "photos"
    drawing_dir = root / "drawings"
    photo_dir.mkdir(parents=True, exist_ok=True)
    drawing_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        photo = Image.new("RGB", (size, size), tuple(int(c) for c in rng.integers(120, 220, 3)))
        drawing = Image.new("RGB", (size, size), (255, 255, 255))
        pd, dd = ImageDraw.Draw(photo), ImageDraw.Draw(drawing)
        for _ in range(3):
            x0, y0 = rng.integers(2, size // 2, 2)
            x1 = int(x0 + rng.integers(size // 8, size // 2))
            y1 = int(y0 + rng.integers(size // 8, size // 2))
            box = (int(x0), int(y0), min(x1, size - 2), min(y1, size - 2))
            color = tuple(int(c) for c in rng.integers(0, 255, 3))
            if rng.random() < 0.5:
                pd.ellipse(box, fill=color)
                dd.ellipse(box, outline=(0, 0, 0), width=2)
            else:
                pd.rectangle(box, fill=color)
                dd.rectangle(box, outline=(0, 0, 0), width=2)
        photo.save(photo_dir / f"img{i:03d}.png")
        drawing.save(drawing_dir / f"img{i:03d}.png")
    return photo_dir, drawing_dir


def make_manifest(tmp_path, n, size=64, seed=0, train_fraction=0.7):
    photo_dir, drawing_dir = make_pair_images(tmp_path, n, size=size, seed=seed)
    from p2ld.data import scan_pairs

    manifest = scan_pairs(photo_dir, drawing_dir)
    return split_dataset(manifest, train_fraction, seed)


def synthetic_manifest(n):
    """Manifest of n ids with no backing files, for split arithmetic tests."""
    return DatasetManifest(pairs=[ImagePair(id=f"p{i:05d}", photo_path="", drawing_path="") for i in range(n)])


@pytest.fixture(autouse=True)
def _two_threads():
    torch.set_num_threads(2)


@pytest.fixture
def pair_dirs(tmp_path):
    return make_pair_images(tmp_path, 3, size=64, seed=1)
