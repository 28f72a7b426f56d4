"""Figure rendering for the report paths: loss curves next to the training
metric log, and score distributions next to evaluation CSVs."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _read_metric_rows(csv_path):
    with open(csv_path, newline="", encoding="utf-8") as f:
        return [row for row in csv.DictReader(f)]


def save_loss_curves(csv_path, out_png):
    """Training curves (losses and held-out quality) from metrics.csv."""
    rows = _read_metric_rows(csv_path)
    if not rows:
        return
    ks = [int(r["k"]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for key in ("loss_d", "loss_g", "loss_coarse"):
        ax1.plot(ks, [float(r[key]) for r in rows], label=key)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax1.grid(alpha=0.3)
    ax2.plot(ks, [float(r["psnr_local"]) for r in rows], label="psnr_local")
    ax2.plot(ks, [float(r["psnr_global"]) for r in rows], label="psnr_global")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("dB")
    ax2b = ax2.twinx()
    ax2b.plot(ks, [float(r["ssim"]) for r in rows], color="tab:green", label="ssim")
    ax2b.set_ylabel("ssim")
    lines, labels = ax2.get_legend_handles_labels()
    lines2, labels2 = ax2b.get_legend_handles_labels()
    ax2.legend(lines + lines2, labels + labels2, loc="lower right")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def save_eval_histograms(reports, out_png):
    """Distribution of per-image scores from an evaluation run."""
    if not reports:
        return
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    fields = (("psnr_local", "dB"), ("psnr_global", "dB"), ("ssim", ""))
    for ax, (key, unit) in zip(axes, fields):
        vals = [getattr(r, key) for r in reports]
        ax.hist(vals, bins=min(20, max(len(vals) // 2, 5)), color="tab:blue", alpha=0.8)
        ax.set_title(key)
        ax.set_xlabel(unit)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
