"""Photo-to-line-drawing translation: model, training, metrics, CLI."""

__version__ = "0.1.0"

from .data import DatasetManifest, ImagePair, preprocess, denormalize, scan_pairs, split_dataset
from .discriminator import DiscriminatorConfig, PatchDiscriminator
from .generator import Generator, GeneratorConfig
from .losses import LossReport, LossWeights, pixel_l1, ra_d_loss, ra_g_loss, total_losses
from .metrics import BuiltinExtractor, MetricReport, evaluate_set, fid, psnr, ssim
from .trainer import TrainConfig, fit, load_checkpoint, save_checkpoint, train_step

__all__ = [
    "DatasetManifest",
    "ImagePair",
    "preprocess",
    "denormalize",
    "scan_pairs",
    "split_dataset",
    "DiscriminatorConfig",
    "PatchDiscriminator",
    "Generator",
    "GeneratorConfig",
    "LossReport",
    "LossWeights",
    "pixel_l1",
    "ra_d_loss",
    "ra_g_loss",
    "total_losses",
    "BuiltinExtractor",
    "MetricReport",
    "evaluate_set",
    "fid",
    "psnr",
    "ssim",
    "TrainConfig",
    "fit",
    "load_checkpoint",
    "save_checkpoint",
    "train_step",
]
