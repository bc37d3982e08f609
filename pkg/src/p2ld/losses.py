"""Training objectives: relativistic-average adversarial pair plus pixel L1.

Each critic score grid is compared against the mean score of the opposite
class before the squared-error target, so adding a constant to both grids
leaves the losses unchanged.
"""

import json
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F


class LossConfigError(Exception):
    pass


@dataclass
class LossWeights:
    """Weights for the discriminator, generator-adversarial and L1 terms."""

    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 100.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise LossConfigError(f"loss weights must be >= 0, got {self}")

    def to_dict(self) -> dict:
        return {"lambda1": self.lambda1, "lambda2": self.lambda2, "lambda3": self.lambda3}

    @classmethod
    def from_dict(cls, doc: dict) -> "LossWeights":
        return cls(**doc)


@dataclass
class LossReport:
    """Scalar loss values for one optimization step."""

    d_loss: float
    g_adv: float
    g_pix: float
    g_total: float
    step: int = field(default=0)

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "d_loss": self.d_loss,
                "g_adv": self.g_adv,
                "g_pix": self.g_pix,
                "g_total": self.g_total,
            }
        )


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def ra_d_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Discriminator side: real scores above the fake mean toward 1, and
    fake scores above the real mean toward 0."""
    _check_same_shape(d_real, d_fake, "ra_d_loss")
    real_rel = d_real - d_fake.mean()
    fake_rel = d_fake - d_real.mean()
    return (
        F.mse_loss(real_rel, torch.ones_like(real_rel))
        + F.mse_loss(fake_rel, torch.zeros_like(fake_rel))
    )


def ra_g_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Generator side: identical form with the real/fake roles swapped."""
    _check_same_shape(d_real, d_fake, "ra_g_loss")
    return ra_d_loss(d_fake, d_real)


def pixel_l1(generated: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    _check_same_shape(generated, gt, "pixel_l1")
    return (generated - gt).abs().mean()


def total_losses(
    d_real: torch.Tensor,
    d_fake_for_d: torch.Tensor,
    d_fake_for_g: torch.Tensor,
    generated: torch.Tensor,
    gt: torch.Tensor,
    weights: LossWeights,
    step: int = 0,
) -> LossReport:
    """Compose the weighted objective into a per-step report.

    g_total = lambda2 * g_adv + lambda3 * g_pix, to machine precision.
    """
    d = weights.lambda1 * ra_d_loss(d_real, d_fake_for_d)
    g_adv = ra_g_loss(d_real, d_fake_for_g)
    g_pix = pixel_l1(generated, gt)
    g_total = weights.lambda2 * float(g_adv) + weights.lambda3 * float(g_pix)
    return LossReport(d_loss=float(d), g_adv=float(g_adv), g_pix=float(g_pix), g_total=g_total, step=step)
