"""Conditional patch discriminator.

Fully convolutional critic over the channel-concatenation of photo and
drawing, scoring a grid of local patches: four 4x4 stride-2 blocks (no norm
on the first) and a 3x3 stride-1 head, so a 512 input yields a 32x32 raw
score grid and any size divisible by 16 is accepted.
"""

import json
from dataclasses import dataclass

import torch
import torch.nn as nn

from .generator import InstanceNorm, _init_he


class DiscriminatorConfigError(Exception):
    pass


@dataclass
class DiscriminatorConfig:
    in_channels: int = 6
    widths: tuple = (64, 128, 256, 512)
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if not self.widths or list(self.widths) != sorted(set(self.widths)):
            raise DiscriminatorConfigError(f"widths must be nonempty and strictly increasing, got {self.widths}")

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels, "widths": list(self.widths), "leaky_slope": self.leaky_slope}

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscriminatorConfig":
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DiscriminatorConfig":
        return cls.from_dict(json.loads(text))


class DiscBlock(nn.Module):
    """4x4 stride-2 conv, optional instance norm, leaky relu; halves even sides."""

    def __init__(self, in_channels, out_channels, use_norm=True, slope=0.2):
        super().__init__()
        layers = [nn.Conv2d(in_channels, out_channels, 4, stride=2, padding=1)]
        if use_norm:
            layers.append(InstanceNorm())
        layers.append(nn.LeakyReLU(slope, inplace=True))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ValueError(f"disc block needs even spatial sides, got {tuple(x.shape[-2:])}")
        return self.body(x)


class PatchDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig = None):
        super().__init__()
        cfg = cfg or DiscriminatorConfig()
        self.cfg = cfg
        blocks = []
        ch = cfg.in_channels
        for i, w in enumerate(cfg.widths):
            blocks.append(DiscBlock(ch, w, use_norm=i > 0, slope=cfg.leaky_slope))
            ch = w
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Conv2d(ch, 1, 3, stride=1, padding=1)
        self.apply(_init_he)

    @property
    def downsampling(self) -> int:
        return 2 ** len(self.cfg.widths)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected Bx{self.cfg.in_channels}xHxW input, got {tuple(x.shape)}")
        if x.shape[-1] % self.downsampling or x.shape[-2] % self.downsampling:
            raise ValueError(
                f"input sides must be divisible by {self.downsampling}, got {tuple(x.shape[-2:])}"
            )
        return self.head(self.blocks(x))

    def discriminate(self, photo_t: torch.Tensor, drawing_t: torch.Tensor) -> torch.Tensor:
        """Raw Bx1xGxG patch scores for a (photo, drawing) pair."""
        if photo_t.shape != drawing_t.shape:
            raise ValueError(f"photo/drawing shape mismatch: {tuple(photo_t.shape)} vs {tuple(drawing_t.shape)}")
        return self.forward(torch.cat([photo_t, drawing_t], dim=1))

    def weight_manifest(self) -> dict[str, list[int]]:
        return {name: list(p.shape) for name, p in self.named_parameters()}


def receptive_window(position: int, widths_count: int = 4) -> tuple[int, int]:
    """Input interval [start, stop) a score at grid `position` can see.

    Walks the 4x4/s2/p1 blocks and the 3x3/s1/p1 head back to the input.
    """
    start, size = position, 1
    start, size = start - 1, size + 2  # 3x3 s1 p1 head
    for _ in range(widths_count):
        start, size = 2 * start - 1, 2 * (size - 1) + 4
    return start, start + size
