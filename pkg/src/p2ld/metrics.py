"""Quantitative evaluation: FID, SSIM and PSNR over image sets.

SSIM follows the standard windowed formulation (11x11 Gaussian, sigma 1.5,
K1=0.01, K2=0.03, dynamic range 255) on the luminance channel. FID fits a
Gaussian to embedded features of each set and reports the Frechet distance,
with the matrix square root taken by eigendecomposition and negative
eigenvalues clamped to zero.
"""

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

logger = logging.getLogger(__name__)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class MetricError(Exception):
    pass


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 255.0) -> float:
    """10*log10(max_val^2 / MSE); +inf when the images are identical."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def to_luminance(img: np.ndarray) -> np.ndarray:
    """HxWx3 -> HxW via the 0.299/0.587/0.114 weighting; HxW passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        w = np.asarray(LUMA_WEIGHTS)
        return img @ w
    raise MetricError(f"expected HxW or HxWx3 image, got shape {img.shape}")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 255.0,
         window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM over all valid Gaussian windows of the luminance images."""
    x, y = to_luminance(a), to_luminance(b)
    if x.shape != y.shape:
        raise MetricError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < window_size:
        raise MetricError(f"image {x.shape} smaller than the {window_size}x{window_size} window")
    w = gaussian_window(window_size, sigma)
    # weighted local moments over every valid window position
    xs = np.lib.stride_tricks.sliding_window_view(x, (window_size, window_size))
    ys = np.lib.stride_tricks.sliding_window_view(y, (window_size, window_size))
    mu_x = np.tensordot(xs, w, axes=([2, 3], [0, 1]))
    mu_y = np.tensordot(ys, w, axes=([2, 3], [0, 1]))
    xx = np.tensordot(xs * xs, w, axes=([2, 3], [0, 1])) - mu_x**2
    yy = np.tensordot(ys * ys, w, axes=([2, 3], [0, 1])) - mu_y**2
    xy = np.tensordot(xs * ys, w, axes=([2, 3], [0, 1])) - mu_x * mu_y
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    s = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / ((mu_x**2 + mu_y**2 + c1) * (xx + yy + c2))
    return float(s.mean())


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature matrices.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), covariances with
    N-1 normalization; the cross term uses Tr sqrt(A^{1/2} S_b A^{1/2}).
    """
    feats_a, feats_b = np.asarray(feats_a, dtype=np.float64), np.asarray(feats_b, dtype=np.float64)
    if feats_a.ndim != 2 or feats_b.ndim != 2 or feats_a.shape[1] != feats_b.shape[1]:
        raise MetricError(f"fid needs NxD matrices of equal D, got {feats_a.shape} and {feats_b.shape}")
    d = feats_a.shape[1]
    for name, f in (("a", feats_a), ("b", feats_b)):
        if f.shape[0] < d + 1:
            warnings.warn(f"feature set {name} has N={f.shape[0]} < D+1={d + 1}; covariance is rank-deficient")
    mu_a, mu_b = feats_a.mean(axis=0), feats_b.mean(axis=0)
    cov_a = np.cov(feats_a, rowvar=False).reshape(d, d)
    cov_b = np.cov(feats_b, rowvar=False).reshape(d, d)
    root_a = _sqrt_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    inner = (inner + inner.T) / 2.0
    cross_vals = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sqrt(cross_vals).sum())


class FeatureExtractor:
    """Deterministic map from uint8 RGB images to fixed-size feature vectors."""

    name: str = "base"
    output_dim: int = 0

    def extract(self, images: list[np.ndarray]) -> np.ndarray:
        raise NotImplementedError


class _SmallConvNet(nn.Module):
    def __init__(self, dim=64):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(32, dim, 3, stride=2, padding=1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
        )

    def forward(self, x):
        return self.body(x).flatten(1)


class BuiltinExtractor(FeatureExtractor):
    """Fixed-seed random 64-d convolutional embedding for desk-scale FID.

    FID values are only comparable under the same extractor; the name is
    stamped into every MetricReport.
    """

    def __init__(self, dim: int = 64, seed: int = 0, input_size: int = 64):
        self.name = f"builtin-rand{dim}-seed{seed}"
        self.output_dim = dim
        self.input_size = input_size
        torch.manual_seed(seed)
        self.net = _SmallConvNet(dim).eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    def extract(self, images: list[np.ndarray]) -> np.ndarray:
        if len(images) == 0:
            raise MetricError("cannot extract features from an empty image list")
        batch = []
        for img in images:
            pil = Image.fromarray(np.asarray(img, dtype=np.uint8)).convert("RGB")
            pil = pil.resize((self.input_size, self.input_size), Image.BILINEAR)
            arr = np.asarray(pil, dtype=np.float32) / 127.5 - 1.0
            batch.append(torch.from_numpy(arr).permute(2, 0, 1))
        with torch.no_grad():
            feats = self.net(torch.stack(batch))
        return feats.numpy().astype(np.float64)


class TorchScriptExtractor(FeatureExtractor):
    """Externally supplied embedding (e.g. a 2048-d Inception-style network)
    loaded from a TorchScript file mapping Bx3xHxW in [-1, 1] to BxD."""

    def __init__(self, path, input_size: int = 299):
        self.net = torch.jit.load(str(path), map_location="cpu").eval()
        self.name = Path(path).stem
        self.input_size = input_size
        probe = torch.zeros(1, 3, input_size, input_size)
        with torch.no_grad():
            self.output_dim = int(self.net(probe).shape[1])

    def extract(self, images: list[np.ndarray]) -> np.ndarray:
        if len(images) == 0:
            raise MetricError("cannot extract features from an empty image list")
        out = []
        with torch.no_grad():
            for img in images:
                pil = Image.fromarray(np.asarray(img, dtype=np.uint8)).convert("RGB")
                pil = pil.resize((self.input_size, self.input_size), Image.BILINEAR)
                arr = np.asarray(pil, dtype=np.float32) / 127.5 - 1.0
                t = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)
                out.append(self.net(t).squeeze(0).numpy())
        return np.stack(out).astype(np.float64)


def extract_features(images: list[np.ndarray], extractor: FeatureExtractor) -> np.ndarray:
    """Row i holds the features of image i; deterministic per image."""
    return extractor.extract(images)


@dataclass
class MetricReport:
    extractor: str
    fid: float
    ssim_mean: float
    psnr_mean: float
    per_image: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "extractor": self.extractor,
            "fid": _json_num(self.fid),
            "ssim_mean": _json_num(self.ssim_mean),
            "psnr_mean": _json_num(self.psnr_mean),
            "per_image": [
                {"id": r["id"], "ssim": _json_num(r["ssim"]), "psnr": _json_num(r["psnr"])}
                for r in self.per_image
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "MetricReport":
        doc = json.loads(Path(path).read_text())
        return cls(
            extractor=doc["extractor"],
            fid=_parse_num(doc["fid"]),
            ssim_mean=_parse_num(doc["ssim_mean"]),
            psnr_mean=_parse_num(doc["psnr_mean"]),
            per_image=[
                {"id": r["id"], "ssim": _parse_num(r["ssim"]), "psnr": _parse_num(r["psnr"])}
                for r in doc["per_image"]
            ],
        )


def _json_num(x: float):
    # infinities are not valid JSON; serialize them as the string "inf"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def _parse_num(x) -> float:
    return float(x)


def _load_uint8(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def evaluate_set(gen_dir, gt_dir, extractor: FeatureExtractor) -> MetricReport:
    """Per-image SSIM/PSNR and set-level FID for directories paired by basename."""
    from .data import _index_dir  # same stem-matching rule as the scanner

    gen_idx = _index_dir(Path(gen_dir))
    gt_idx = _index_dir(Path(gt_dir))
    common = sorted(set(gen_idx) & set(gt_idx))
    for stem in sorted(set(gen_idx) ^ set(gt_idx)):
        logger.warning("id %r present in only one directory, excluded from evaluation", stem)
    if not common:
        raise MetricError(f"no common basenames between {gen_dir} and {gt_dir}")

    gen_images = [_load_uint8(gen_idx[s]) for s in common]
    gt_images = [_load_uint8(gt_idx[s]) for s in common]
    per_image = []
    for stem, g, t in zip(common, gen_images, gt_images):
        per_image.append({"id": stem, "ssim": ssim(g, t), "psnr": psnr(g, t, 255.0)})

    feats_gen = extract_features(gen_images, extractor)
    feats_gt = extract_features(gt_images, extractor)
    return MetricReport(
        extractor=extractor.name,
        fid=fid(feats_gen, feats_gt),
        ssim_mean=float(np.mean([r["ssim"] for r in per_image])),
        psnr_mean=float(np.mean([r["psnr"] for r in per_image])),
        per_image=per_image,
    )
