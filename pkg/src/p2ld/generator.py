"""Cross-scale dense-skip generator.

Encoder-decoder translation network. The encoder is a grouped-bottleneck
residual backbone (ResNeXt-50 style stage table by default) exposing its five
stage outputs F1..F5 at 1/2 .. 1/32 resolution. Every decoder stage fuses the
previous layer with all encoder features of equal or larger resolution, each
brought to the working resolution/width by a progressive-downsampling chain
(PDS) of stride-2 convolutions, then upsamples by 2 with nearest neighbor.
"""

import json
import math
import warnings
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


class GeneratorConfigError(Exception):
    pass


@dataclass
class EncoderStageSpec:
    """One encoder stage: output width, downsampling stride, block count, groups."""

    out_channels: int
    stride: int = 2
    blocks: int = 1
    cardinality: int = 1

    def to_dict(self):
        return {
            "out_channels": self.out_channels,
            "stride": self.stride,
            "blocks": self.blocks,
            "cardinality": self.cardinality,
        }


DEFAULT_ENCODER_STAGES = (
    EncoderStageSpec(64, 2, 1, 1),  # 7x7 stem
    EncoderStageSpec(256, 2, 3, 32),
    EncoderStageSpec(512, 2, 4, 32),
    EncoderStageSpec(1024, 2, 6, 32),
    EncoderStageSpec(2048, 2, 3, 32),
)
DEFAULT_DECODER_CHANNELS = (1024, 512, 256, 128, 64)

FUSION_MODES = ("sum", "concat")
DECODER_BLOCKS = ("conv_up", "convtranspose_up")


@dataclass
class GeneratorConfig:
    input_size: int = 512
    encoder_stages: tuple = DEFAULT_ENCODER_STAGES
    decoder_channels: tuple = DEFAULT_DECODER_CHANNELS
    fusion_mode: str = "sum"
    skips_enabled: bool = True
    decoder_block: str = "conv_up"
    output_channels: int = 3
    pretrained_encoder: str | None = None

    def __post_init__(self):
        self.encoder_stages = tuple(
            s if isinstance(s, EncoderStageSpec) else EncoderStageSpec(**s)
            for s in self.encoder_stages
        )
        self.decoder_channels = tuple(self.decoder_channels)
        if len(self.encoder_stages) != 5 or len(self.decoder_channels) != 5:
            raise GeneratorConfigError("exactly 5 encoder stages and 5 decoder channels required")
        if self.input_size < 32 or self.input_size % 32 != 0:
            raise GeneratorConfigError(f"input_size must be >= 32 and divisible by 32, got {self.input_size}")
        if self.fusion_mode not in FUSION_MODES:
            raise GeneratorConfigError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.decoder_block not in DECODER_BLOCKS:
            raise GeneratorConfigError(f"decoder_block must be one of {DECODER_BLOCKS}")
        factor = 1
        for s in self.encoder_stages:
            if s.stride not in (1, 2):
                raise GeneratorConfigError("stage strides must be 1 or 2")
            if s.blocks < 1:
                raise GeneratorConfigError("stage blocks must be >= 1")
            factor *= s.stride
        if factor != 32:
            raise GeneratorConfigError(f"encoder stage strides must multiply to 32, got {factor}")

    def stage_factors(self) -> list[int]:
        """Cumulative downsampling factor after each encoder stage."""
        out, factor = [], 1
        for s in self.encoder_stages:
            factor *= s.stride
            out.append(factor)
        return out

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "encoder_stages": [s.to_dict() for s in self.encoder_stages],
            "decoder_channels": list(self.decoder_channels),
            "fusion_mode": self.fusion_mode,
            "skips_enabled": self.skips_enabled,
            "decoder_block": self.decoder_block,
            "output_channels": self.output_channels,
            "pretrained_encoder": self.pretrained_encoder,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorConfig":
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorConfig":
        return cls.from_dict(json.loads(text))


def tiny_generator_config(size: int = 32, **overrides) -> GeneratorConfig:
    """Miniature config for desk-scale gradient and determinism tests."""
    defaults = dict(
        input_size=size,
        encoder_stages=(
            EncoderStageSpec(4, 2, 1, 1),
            EncoderStageSpec(8, 2, 1, 2),
            EncoderStageSpec(8, 2, 1, 2),
            EncoderStageSpec(8, 2, 1, 2),
            EncoderStageSpec(8, 2, 1, 2),
        ),
        decoder_channels=(8, 8, 8, 8, 8),
    )
    defaults.update(overrides)
    return GeneratorConfig(**defaults)


class InstanceNorm(nn.Module):
    """Per-sample, per-channel normalization without affine parameters.

    Unlike nn.InstanceNorm2d this accepts 1x1 spatial maps (output zero),
    which the miniature 32-pixel configs produce at the deepest stage.
    """

    def __init__(self, eps: float = 1e-5):
        super().__init__()
        self.eps = eps

    def forward(self, x):
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = ((x - mean) ** 2).mean(dim=(2, 3), keepdim=True)
        return (x - mean) / torch.sqrt(var + self.eps)


def conv_in_relu(in_ch, out_ch, kernel, stride=1, padding=0):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=padding),
        InstanceNorm(),
        nn.ReLU(inplace=True),
    )


class ResNeXtBlock(nn.Module):
    """Grouped bottleneck residual block: out = shortcut(x) + branch(x).

    The branch is 1x1 -> grouped 3x3 -> 1x1 with the group count acting as
    the cardinality; no activation follows the residual sum, so zeroing the
    branch's final convolution makes a stride-1, width-matched block the
    identity map.
    """

    def __init__(self, in_channels, out_channels, stride=1, cardinality=1):
        super().__init__()
        width = out_channels // 2
        if width % cardinality != 0:
            raise GeneratorConfigError(
                f"cardinality {cardinality} must divide bottleneck width {width}"
            )
        self.branch = nn.Sequential(
            nn.Conv2d(in_channels, width, 1),
            InstanceNorm(),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, stride=stride, padding=1, groups=cardinality),
            InstanceNorm(),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, out_channels, 1),
            InstanceNorm(),
        )
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride), InstanceNorm()
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        return self.shortcut(x) + self.branch(x)


class Encoder(nn.Module):
    """Five-stage backbone exposing each stage output F1..F5."""

    def __init__(self, cfg: GeneratorConfig, in_channels: int = 3):
        super().__init__()
        specs = cfg.encoder_stages
        stem = specs[0]
        self.stages = nn.ModuleList()
        self.stages.append(conv_in_relu(in_channels, stem.out_channels, 7, stride=stem.stride, padding=3))
        ch = stem.out_channels
        for i, spec in enumerate(specs[1:], start=2):
            layers = []
            if i == 2:
                # second stage downsamples by pooling, its blocks keep stride 1
                if spec.stride == 2:
                    layers.append(nn.MaxPool2d(3, stride=2, padding=1))
                block_stride = 1
            else:
                block_stride = spec.stride
            for b in range(spec.blocks):
                layers.append(
                    ResNeXtBlock(ch, spec.out_channels, stride=block_stride if b == 0 else 1,
                                 cardinality=spec.cardinality)
                )
                ch = spec.out_channels
            self.stages.append(nn.Sequential(*layers))

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def build_pds(in_channels: int, out_channels: int, in_res: int, target_res: int) -> nn.Sequential:
    """Progressive downsampling chain bringing a feature map to target_res.

    log2(in_res / target_res) stride-2 3x3 convolutions, the first also
    projecting to out_channels; a single 1x1 projection when the resolution
    already matches. Each convolution is followed by norm and activation.
    """
    if in_res < target_res:
        raise GeneratorConfigError(f"cannot downsample {in_res} to larger {target_res}")
    if in_res % target_res != 0:
        raise GeneratorConfigError(f"resolution ratio {in_res}/{target_res} is not an integer")
    ratio = in_res // target_res
    if ratio & (ratio - 1) != 0:
        raise GeneratorConfigError(f"resolution ratio {ratio} is not a power of 2")
    if ratio == 1:
        return nn.Sequential(conv_in_relu(in_channels, out_channels, 1))
    steps = []
    ch = in_channels
    for _ in range(int(math.log2(ratio))):
        steps.append(conv_in_relu(ch, out_channels, 3, stride=2, padding=1))
        ch = out_channels
    return nn.Sequential(*steps)


def fuse_sum(prev: torch.Tensor, contributions, labels=None) -> torch.Tensor:
    """Element-wise sum fusion of the previous-layer output with projected
    encoder features; all inputs must share shape exactly."""
    out = prev
    for idx, c in enumerate(contributions):
        if c.shape != prev.shape:
            label = labels[idx] if labels else idx
            raise ValueError(
                f"fusion shape mismatch from encoder stage {label}: "
                f"{tuple(c.shape)} vs {tuple(prev.shape)}"
            )
        out = out + c
    return out


class DecodeLayer(nn.Module):
    """One decoder stage; both kinds double the spatial resolution.

    conv_up: two 3x3 conv+norm+act to ch_out, then x2 nearest upsample.
    convtranspose_up: stride-2 transposed conv (x2) and nearest upsample (x2)
    refined by a stride-2 3x3 conv, landing on the same x2 overall.
    """

    def __init__(self, in_channels, out_channels, kind="conv_up"):
        super().__init__()
        if kind == "conv_up":
            self.body = nn.Sequential(
                conv_in_relu(in_channels, out_channels, 3, padding=1),
                conv_in_relu(out_channels, out_channels, 3, padding=1),
                nn.Upsample(scale_factor=2, mode="nearest"),
            )
        elif kind == "convtranspose_up":
            self.body = nn.Sequential(
                nn.ConvTranspose2d(in_channels, out_channels, 4, stride=2, padding=1),
                InstanceNorm(),
                nn.ReLU(inplace=True),
                nn.Upsample(scale_factor=2, mode="nearest"),
                conv_in_relu(out_channels, out_channels, 3, stride=2, padding=1),
            )
        else:
            raise GeneratorConfigError(f"unknown decoder block kind {kind!r}")

    def forward(self, x):
        return self.body(x)


class Generator(nn.Module):
    """Photo-to-drawing translator realizing the cross-scale skip wiring.

    Decoder stage k (k=1..5, deepest first) runs at the resolution of the
    previous output and receives every encoder feature of equal or larger
    resolution through its own PDS chain, each feature entering that stage
    exactly once; F5 enters stage 1 as the previous-layer input via a 1x1
    projection. Output is a 3x3 convolution squashed by tanh.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg, in_channels=3)

        enc_ch = [s.out_channels for s in cfg.encoder_stages]
        factors = cfg.stage_factors()  # resolution divisors of F1..F5
        dc = cfg.decoder_channels
        # channel width of the previous-layer input at each decoder stage
        self.fuse_widths = [dc[0], dc[0], dc[1], dc[2], dc[3]]

        self.prev_proj = build_pds(enc_ch[4], dc[0], factors[4], factors[4])
        self.skip_stages = []  # encoder stages feeding each decoder stage
        self.skips = nn.ModuleList()
        self.fuse_convs = nn.ModuleList()
        self.decode_layers = nn.ModuleList()
        for k in range(1, 6):
            fin = factors[4] // 2 ** (k - 1)  # input resolution divisor of stage k
            stage_res = cfg.input_size // fin
            width = self.fuse_widths[k - 1]
            sources = [i for i in range(1, 6) if factors[i - 1] <= fin]
            if k == 1:
                sources.remove(5)  # F5 already consumed as the previous layer
            if not cfg.skips_enabled:
                sources = []
            self.skip_stages.append(sources)
            self.skips.append(
                nn.ModuleDict(
                    {
                        str(i): build_pds(enc_ch[i - 1], width, cfg.input_size // factors[i - 1], stage_res)
                        for i in sources
                    }
                )
            )
            if cfg.fusion_mode == "concat":
                self.fuse_convs.append(nn.Conv2d(width * (1 + len(sources)), width, 1))
            else:
                self.fuse_convs.append(nn.Identity())
            self.decode_layers.append(DecodeLayer(width, dc[k - 1], cfg.decoder_block))
        self.out_conv = nn.Conv2d(dc[4], cfg.output_channels, 3, padding=1)

        self.apply(_init_he)
        if cfg.pretrained_encoder:
            self.load_encoder_weights(cfg.pretrained_encoder)

    def encode(self, x):
        """Return the five encoder feature maps F1..F5."""
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected Bx3xHxW input, got {tuple(x.shape)}")
        return self.encoder(x)

    def decode(self, feats, drop_skips=None):
        """Fuse-and-upsample pass over encoder features.

        drop_skips: optional set of (decoder_stage, encoder_stage) pairs,
        1-based, whose skip contribution is replaced by zeros. Diagnostic
        hook used to verify per-path gradient flow and skip ablations.
        """
        drop_skips = drop_skips or set()
        prev = self.prev_proj(feats[4])
        for k in range(1, 6):
            contribs, labels = [], []
            for i in self.skip_stages[k - 1]:
                c = self.skips[k - 1][str(i)](feats[i - 1])
                if (k, i) in drop_skips:
                    c = torch.zeros_like(c)
                contribs.append(c)
                labels.append(i)
            if self.cfg.fusion_mode == "sum":
                fused = fuse_sum(prev, contribs, labels)
            else:
                fused = self.fuse_convs[k - 1](torch.cat([prev] + contribs, dim=1))
            prev = self.decode_layers[k - 1](fused)
        return torch.tanh(self.out_conv(prev))

    def forward(self, x, drop_skips=None):
        if x.numel() and (x.min() < -1.001 or x.max() > 1.001):
            warnings.warn("generator input exceeds [-1, 1]; did you forget to normalize?")
        return self.decode(self.encode(x), drop_skips=drop_skips)

    def load_encoder_weights(self, path):
        state = torch.load(path, map_location="cpu", weights_only=True)
        self.encoder.load_state_dict(state)

    def weight_manifest(self) -> dict[str, list[int]]:
        """Auditable name -> shape map of every parameter."""
        return {name: list(p.shape) for name, p in self.named_parameters()}


def _init_he(m):
    if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
        if m.bias is not None:
            nn.init.zeros_(m.bias)
