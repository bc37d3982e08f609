"""Figure and table rendering for training logs and metric reports."""

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import MetricReport


def write_per_image_csv(report: MetricReport, path) -> Path:
    """Per-image metric table as id,ssim,psnr; infinities written as inf."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "ssim", "psnr"])
        for row in report.per_image:
            writer.writerow([row["id"], f"{row['ssim']:.6f}", row["psnr"]])
    return path


def plot_metric_histograms(report: MetricReport, out_dir) -> list[Path]:
    """Histogram the per-image SSIM and PSNR distributions."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    ssims = [r["ssim"] for r in report.per_image]
    psnrs = [r["psnr"] for r in report.per_image if math.isfinite(r["psnr"])]
    for values, label, fname in ((ssims, "SSIM", "ssim_hist.png"), (psnrs, "PSNR (dB)", "psnr_hist.png")):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        if values:
            ax.hist(values, bins=min(30, max(5, len(values))), color="#4878a8", edgecolor="black")
        ax.set_xlabel(label)
        ax.set_ylabel("images")
        ax.set_title(f"{label} over {len(report.per_image)} images (extractor: {report.extractor})", fontsize=9)
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def read_train_log(path) -> tuple[list[dict], list[dict]]:
    """Split a train_log.jsonl into per-step and per-epoch records."""
    steps, epochs = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            (epochs if "epoch" in rec else steps).append(rec)
    return steps, epochs


def plot_training_curves(log_path, out_path) -> Path:
    """Loss components versus step from a JSON-lines training log."""
    steps, _ = read_train_log(log_path)
    out_path = Path(out_path)
    fig, axes = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    xs = [r["step"] for r in steps]
    for key, color in (("d_loss", "#b24040"), ("g_adv", "#40792f")):
        axes[0].plot(xs, [r[key] for r in steps], label=key, color=color, linewidth=0.8)
    axes[0].set_ylabel("adversarial")
    axes[0].legend(fontsize=8)
    axes[1].plot(xs, [r["g_pix"] for r in steps], label="g_pix", color="#4878a8", linewidth=0.8)
    axes[1].set_yscale("log")
    axes[1].set_ylabel("pixel L1")
    axes[1].set_xlabel("step")
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
