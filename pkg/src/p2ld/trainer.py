"""Alternating adversarial optimization with deterministic seeding.

One discriminator step (on the detached generated drawing) then one
generator step per batch, Adam for both nets, per-epoch seeded reshuffle,
atomic checkpoints that restore training bit-exactly.
"""

import json
import logging
import math
import os
import random
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .data import DatasetManifest, PairedImages
from .discriminator import DiscriminatorConfig, PatchDiscriminator
from .generator import Generator, GeneratorConfig
from .losses import LossReport, LossWeights, pixel_l1, ra_d_loss, ra_g_loss

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainConfigError(Exception):
    pass


class NonFiniteLossError(Exception):
    """A loss term left the finite range; carries the offending term name."""

    def __init__(self, term: str, value: float, step: int):
        self.term = term
        super().__init__(f"non-finite loss term {term}={value} at step {step}")


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    def __init__(self, file_version, code_version):
        super().__init__(
            f"checkpoint format version {file_version} does not match code version {code_version}"
        )


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 200
    batch_size: int = 1
    image_size: int = 512
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 10
    device: str = "cpu"

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights.from_dict(self.weights)
        if self.lr <= 0:
            raise TrainConfigError(f"lr must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise TrainConfigError(f"betas must be in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainConfigError("epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "image_size": self.image_size,
            "weights": self.weights.to_dict(),
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "device": self.device,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


class TrainState:
    """Models, optimizers and progress counters for one training run."""

    def __init__(self, gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, cfg: TrainConfig):
        self.gen_cfg = gen_cfg
        self.disc_cfg = disc_cfg
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        device = torch.device(cfg.device)
        self.generator = Generator(gen_cfg).to(device)
        self.discriminator = PatchDiscriminator(disc_cfg).to(device)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
        self.epoch = 0  # completed epochs
        self.step = 0  # completed optimization steps
        self.device = device


def _check_finite(name: str, value: torch.Tensor, step: int) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise NonFiniteLossError(name, v, step)
    return v


def discriminator_phase(state: TrainState, photo_t, drawing_t, fake) -> torch.Tensor:
    """Update D on the detached fake; the generator stays out of this path."""
    d_real = state.discriminator.discriminate(photo_t, drawing_t)
    d_fake = state.discriminator.discriminate(photo_t, fake.detach())
    d_loss = state.cfg.weights.lambda1 * ra_d_loss(d_real, d_fake)
    state.opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    state.opt_d.step()
    return d_loss.detach()


def generator_phase(state: TrainState, photo_t, drawing_t, fake):
    """Update G against the refreshed discriminator; D parameters untouched."""
    w = state.cfg.weights
    d_real = state.discriminator.discriminate(photo_t, drawing_t)
    d_fake = state.discriminator.discriminate(photo_t, fake)
    g_adv = ra_g_loss(d_real, d_fake)
    g_pix = pixel_l1(fake, drawing_t)
    g_total = w.lambda2 * g_adv + w.lambda3 * g_pix
    state.opt_g.zero_grad(set_to_none=True)
    state.opt_d.zero_grad(set_to_none=True)  # discard critic grads from the G pass
    g_total.backward()
    state.opt_g.step()
    return g_adv.detach(), g_pix.detach(), g_total.detach()


def train_step(state: TrainState, photo_t: torch.Tensor, drawing_t: torch.Tensor) -> LossReport:
    """One D update on detached fakes, then one G update; returns the report."""
    photo_t = photo_t.to(state.device)
    drawing_t = drawing_t.to(state.device)
    if photo_t.dim() == 3:
        photo_t, drawing_t = photo_t.unsqueeze(0), drawing_t.unsqueeze(0)

    state.generator.train()
    state.discriminator.train()

    fake = state.generator(photo_t)
    d_loss = discriminator_phase(state, photo_t, drawing_t, fake)
    g_adv, g_pix, g_total = generator_phase(state, photo_t, drawing_t, fake)

    state.step += 1
    report = LossReport(
        d_loss=_check_finite("d_loss", d_loss, state.step),
        g_adv=_check_finite("g_adv", g_adv, state.step),
        g_pix=_check_finite("g_pix", g_pix, state.step),
        g_total=_check_finite("g_total", g_total, state.step),
        step=state.step,
    )
    return report


def epoch_order(seed: int, epoch: int, n: int) -> list[int]:
    """Deterministic per-epoch shuffle, independent of global RNG state."""
    order = list(range(n))
    random.Random(seed * 1000003 + epoch).shuffle(order)
    return order


def fit(
    manifest: DatasetManifest,
    cfg: TrainConfig,
    gen_cfg: GeneratorConfig = None,
    disc_cfg: DiscriminatorConfig = None,
    out_dir=None,
    resume=None,
    log_every: int = 1,
) -> TrainState:
    """Run epochs x |train| optimization steps with periodic checkpoints.

    Returns the final state; writes train_log.jsonl (per-step lines plus one
    summary line per epoch) and checkpoint files under out_dir when given.
    """
    gen_cfg = gen_cfg or GeneratorConfig(input_size=cfg.image_size)
    disc_cfg = disc_cfg or DiscriminatorConfig()

    if resume is not None:
        state = load_checkpoint(resume, device=cfg.device)
    else:
        state = TrainState(gen_cfg, disc_cfg, cfg)
    cfg = state.cfg

    data = PairedImages(manifest, "train", cfg.image_size)
    if len(data) == 0:
        raise TrainConfigError("train split is empty")

    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.jsonl", "a")

    if state.epoch >= cfg.epochs:
        logger.info("training complete: checkpoint already at epoch %d/%d", state.epoch, cfg.epochs)
        if log_fh:
            log_fh.close()
        return state

    try:
        for epoch in range(state.epoch, cfg.epochs):
            order = epoch_order(cfg.seed, epoch, len(data))
            epoch_reports = []
            for start in range(0, len(order), cfg.batch_size):
                idxs = order[start : start + cfg.batch_size]
                pairs = [data[i] for i in idxs]
                photos = torch.stack([p.photo_t for p in pairs])
                drawings = torch.stack([p.drawing_t for p in pairs])
                report = train_step(state, photos, drawings)
                epoch_reports.append(report)
                if log_fh and state.step % log_every == 0:
                    log_fh.write(report.to_json_line() + "\n")
            state.epoch = epoch + 1
            summary = {
                "epoch": state.epoch,
                "mean_d_loss": sum(r.d_loss for r in epoch_reports) / len(epoch_reports),
                "mean_g_adv": sum(r.g_adv for r in epoch_reports) / len(epoch_reports),
                "mean_g_pix": sum(r.g_pix for r in epoch_reports) / len(epoch_reports),
                "mean_g_total": sum(r.g_total for r in epoch_reports) / len(epoch_reports),
            }
            if log_fh:
                log_fh.write(json.dumps(summary) + "\n")
                log_fh.flush()
            logger.info(
                "epoch %d/%d d=%.4f g_adv=%.4f g_pix=%.4f",
                state.epoch, cfg.epochs, summary["mean_d_loss"],
                summary["mean_g_adv"], summary["mean_g_pix"],
            )
            if out_dir is not None and (
                state.epoch % cfg.checkpoint_every == 0 or state.epoch == cfg.epochs
            ):
                _save_with_retry(state, out_dir / f"checkpoint_epoch{state.epoch:04d}.pt")
                _save_with_retry(state, out_dir / "checkpoint_last.pt")
    finally:
        if log_fh:
            log_fh.close()
    return state


def _save_with_retry(state: TrainState, path) -> None:
    try:
        save_checkpoint(state, path)
    except OSError:
        logger.warning("checkpoint write to %s failed, retrying once", path)
        save_checkpoint(state, path)


def save_checkpoint(state: TrainState, path) -> None:
    """Atomic write: serialize to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "epoch": state.epoch,
        "step": state.step,
        "gen_cfg": state.gen_cfg.to_dict(),
        "disc_cfg": state.disc_cfg.to_dict(),
        "train_cfg": state.cfg.to_dict(),
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "torch_rng": torch.get_rng_state(),
        "weight_manifest": {
            "generator": state.generator.weight_manifest(),
            "discriminator": state.discriminator.weight_manifest(),
        },
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint_payload(path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint archive")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(payload["version"], CHECKPOINT_VERSION)
    return payload


def load_checkpoint(path, device: str = "cpu") -> TrainState:
    """Restore the full training state; a subsequent step is bit-identical
    to one taken without the save/load round trip."""
    payload = load_checkpoint_payload(path)
    gen_cfg = GeneratorConfig.from_dict(payload["gen_cfg"])
    # pretrained initialization is irrelevant when restoring explicit weights
    gen_cfg.pretrained_encoder = None
    disc_cfg = DiscriminatorConfig.from_dict(payload["disc_cfg"])
    cfg = TrainConfig.from_dict(payload["train_cfg"])
    cfg.device = device
    state = TrainState(gen_cfg, disc_cfg, cfg)
    state.generator.load_state_dict(payload["generator"])
    state.discriminator.load_state_dict(payload["discriminator"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.epoch = payload["epoch"]
    state.step = payload["step"]
    torch.set_rng_state(payload["torch_rng"])
    return state


def load_generator(path, device: str = "cpu") -> Generator:
    """Load only the generator from a checkpoint, ready for inference."""
    payload = load_checkpoint_payload(path)
    gen_cfg = GeneratorConfig.from_dict(payload["gen_cfg"])
    gen_cfg.pretrained_encoder = None
    gen = Generator(gen_cfg).to(torch.device(device))
    gen.load_state_dict(payload["generator"])
    gen.eval()
    return gen
