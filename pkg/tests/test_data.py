import json

import numpy as np
import pytest
import torch
from PIL import Image

from p2ld.data import (
    Category,
    DataError,
    DatasetManifest,
    denormalize,
    normalize_image,
    preprocess,
    scan_pairs,
    split_dataset,
)
from conftest import make_pair_images, synthetic_manifest


class TestNormalization:
    def test_endpoints(self, pair_dirs):
        img = Image.new("RGB", (32, 32), (255, 255, 255))
        assert float(normalize_image(img, 32).max()) == pytest.approx(1.0)
        img = Image.new("RGB", (32, 32), (0, 0, 0))
        assert float(normalize_image(img, 32).min()) == pytest.approx(-1.0)

    def test_midpoint_bracket(self):
        # bytes 127 and 128 bracket the affine midpoint: x/127.5 - 1
        for byte, expected in ((127, 127 / 127.5 - 1.0), (128, 128 / 127.5 - 1.0)):
            img = Image.new("RGB", (32, 32), (byte, byte, byte))
            t = normalize_image(img, 32)
            assert float(t[0, 0, 0]) == pytest.approx(expected, abs=1e-7)
        assert 127 / 127.5 - 1.0 == pytest.approx(-0.00392156862745098)

    def test_resize_1024_to_512(self, tmp_path):
        photo_dir, drawing_dir = make_pair_images(tmp_path, 1, size=1024)
        manifest = scan_pairs(photo_dir, drawing_dir)
        pair = preprocess(manifest.pairs[0], 512)
        assert pair.photo_t.shape == (3, 512, 512)
        assert pair.drawing_t.shape == (3, 512, 512)
        assert pair.photo_t.min() >= -1.0 and pair.photo_t.max() <= 1.0

    def test_bad_size_rejected_before_resize(self, tmp_path):
        photo_dir, drawing_dir = make_pair_images(tmp_path, 1)
        manifest = scan_pairs(photo_dir, drawing_dir)
        for bad in (31, 48, 0):
            with pytest.raises(DataError):
                preprocess(manifest.pairs[0], bad)

    def test_denormalize_endpoints(self):
        t = torch.tensor([[[-1.0]], [[0.0]], [[1.0]]])
        out = denormalize(t)
        assert out[0, 0, 0] == 0
        assert out[0, 0, 1] == 128  # round half up at the midpoint
        assert out[0, 0, 2] == 255

    def test_denormalize_clips(self):
        t = torch.tensor([[[-5.0]], [[5.0]]])
        out = denormalize(t)
        assert out[0, 0, 0] == 0 and out[0, 0, 1] == 255

    def test_quantization_round_trip_all_bytes(self):
        # brute force over every byte value through normalize -> denormalize
        values = torch.arange(256, dtype=torch.float32)
        t = (values / 127.5 - 1.0).reshape(1, 16, 16).repeat(3, 1, 1)
        out = denormalize(t).transpose(2, 0, 1)
        expected = values.numpy().reshape(16, 16)
        assert np.abs(out[0].astype(np.int64) - expected).max() <= 1

    def test_round_trip_against_resized_photo(self, tmp_path):
        photo_dir, _ = make_pair_images(tmp_path, 1, size=64, seed=7)
        src = Image.open(photo_dir / "img000.png").convert("RGB")
        t = normalize_image(src, 32)
        reference = np.asarray(src.resize((32, 32), Image.BILINEAR), dtype=np.int64)
        recovered = denormalize(t).astype(np.int64)
        assert np.abs(recovered - reference).max() <= 1


class TestScan:
    def test_empty_dirs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        a.mkdir(), b.mkdir()
        manifest = scan_pairs(a, b)
        assert len(manifest) == 0 and manifest.warnings == []

    def test_intersection_semantics(self, tmp_path):
        photo_dir, drawing_dir = make_pair_images(tmp_path, 3)
        (drawing_dir / "img002.png").unlink()
        manifest = scan_pairs(photo_dir, drawing_dir)
        assert len(manifest) == 2
        assert len(manifest.warnings) == 1 and "img002" in manifest.warnings[0]

    def test_dimension_mismatch_names_id(self, tmp_path):
        photo_dir, drawing_dir = make_pair_images(tmp_path, 2)
        Image.new("RGB", (64, 32)).save(drawing_dir / "img001.png")
        with pytest.raises(DataError, match="img001"):
            scan_pairs(photo_dir, drawing_dir)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataError):
            scan_pairs(tmp_path / "nope", tmp_path / "nada")

    def test_deterministic_and_sorted(self, tmp_path):
        photo_dir, drawing_dir = make_pair_images(tmp_path, 5)
        m1 = scan_pairs(photo_dir, drawing_dir)
        m2 = scan_pairs(photo_dir, drawing_dir)
        assert m1.to_dict() == m2.to_dict()
        assert m1.ids() == sorted(m1.ids())

    def test_category_map(self, tmp_path):
        photo_dir, drawing_dir = make_pair_images(tmp_path, 3)
        cmap = tmp_path / "categories.csv"
        cmap.write_text("id,category\nimg000,Male\nimg001,CartoonFemale\n")
        manifest = scan_pairs(photo_dir, drawing_dir, cmap)
        cats = {p.id: p.category for p in manifest.pairs}
        assert cats["img000"] is Category.MALE
        assert cats["img001"] is Category.CARTOON_FEMALE
        assert cats["img002"] is Category.OTHERS  # absent ids default

    def test_unknown_category_rejected(self, tmp_path):
        photo_dir, drawing_dir = make_pair_images(tmp_path, 1)
        cmap = tmp_path / "categories.csv"
        cmap.write_text("id,category\nimg000,Robot\n")
        with pytest.raises(DataError, match="Robot"):
            scan_pairs(photo_dir, drawing_dir, cmap)


class TestSplit:
    def test_released_dataset_arithmetic(self):
        manifest = split_dataset(synthetic_manifest(1532), 0.7, seed=0)
        assert len(manifest.subset("train")) == 1072
        assert len(manifest.subset("test")) == 460

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_small_split_any_seed(self, seed):
        manifest = split_dataset(synthetic_manifest(10), 0.7, seed=seed)
        assert len(manifest.subset("train")) == 7
        assert len(manifest.subset("test")) == 3

    def test_determinism(self):
        a = split_dataset(synthetic_manifest(100), 0.7, seed=42)
        b = split_dataset(synthetic_manifest(100), 0.7, seed=42)
        assert a.split == b.split

    @pytest.mark.parametrize("seed", range(10))
    def test_partition_invariants(self, seed):
        base = synthetic_manifest(57)
        manifest = split_dataset(base, 0.3, seed=seed)
        train = set(p.id for p in manifest.subset("train"))
        test = set(p.id for p in manifest.subset("test"))
        assert train | test == set(base.ids())
        assert train & test == set()

    def test_empty_manifest(self):
        with pytest.raises(DataError, match="empty manifest"):
            split_dataset(synthetic_manifest(0), 0.7, seed=0)

    def test_bad_fraction(self):
        for frac in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(DataError):
                split_dataset(synthetic_manifest(5), frac, seed=0)


class TestManifestIO:
    def test_json_round_trip(self, tmp_path):
        photo_dir, drawing_dir = make_pair_images(tmp_path, 4)
        manifest = split_dataset(scan_pairs(photo_dir, drawing_dir), 0.5, seed=3)
        path = tmp_path / "manifest.json"
        manifest.save(path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"seed", "train_fraction", "pairs"}
        assert doc["seed"] == 3 and doc["train_fraction"] == 0.5
        again = DatasetManifest.load(path)
        assert again.to_dict() == manifest.to_dict()

    def test_category_counts_sum(self):
        counts = {"Male": 388, "Female": 422, "CartoonMale": 210, "CartoonFemale": 426, "Others": 86}
        assert sum(counts.values()) == 1532
        pairs = []
        i = 0
        for cat, n in counts.items():
            for _ in range(n):
                pairs.append(dict(id=f"p{i:05d}", photo_path="", drawing_path="", category=cat, split=None))
                i += 1
        manifest = DatasetManifest.from_dict({"seed": None, "train_fraction": None, "pairs": pairs})
        assert manifest.category_counts() == counts
        assert len(manifest) == 1532
