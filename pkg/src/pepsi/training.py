"""Two-network training: alternating discriminator/generator steps under
the two-timescale update rule, with a schedule that fades out the coarse
path's loss contribution.

Every stochastic choice of step k derives from SeedSequence(seed, domain, k),
so runs are bit-reproducible and a checkpoint plus iteration counter is
enough to resume a run as if it had never stopped.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import engine as en
from .checkpoint import load_checkpoint, save_checkpoint
from .engine import ContractError
from .losses import LossWeights, composite_output, coarse_loss, d_hinge_loss, g_loss, total_loss
from .masks import FreeFormParams, gen_freeform_mask, gen_square_mask
from .metrics import evaluate_pair
from .nets import (build_generator, build_red, init_spectral_states,
                   pepsi_forward, red_forward)
from .optim import AdamState, SpectralState, adam_step
from .ppm import read_ppm
from .synthetic import SyntheticSpec, gen_image

METRIC_COLUMNS = ("k", "loss_d", "loss_g", "loss_coarse",
                  "psnr_local", "psnr_global", "ssim")

# SeedSequence spawn-key domains (domain 3 is taken by synthetic imagery)
_DOMAIN_STEP = 0
_DOMAIN_INIT = 1
_DOMAIN_EVAL = 2


class TrainingAbort(RuntimeError):
    """Raised when a loss goes non-finite; training must not limp on."""


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass
class TrainState:
    """Optimizer moments, spectral vectors, and the iteration counter."""

    k: int
    k_max: int
    adam_g: dict
    adam_d: dict
    spectral: dict
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    seed: int = 0

    def effective_lrs(self):
        """Both rates drop by 10x once k crosses 0.9 k_max (ratio kept)."""
        if self.k >= 0.9 * self.k_max:
            return self.lr_g / 10.0, self.lr_d / 10.0
        return self.lr_g, self.lr_d


def init_networks(cfg):
    """Build generator, discriminator and a fresh TrainState from a config."""
    rng = _rng(cfg.seed, _DOMAIN_INIT)
    g_net = build_generator(cfg.variant, rng, channel_div=cfg.channel_div,
                            dpu_rates=cfg.dpu_rates, groups=cfg.groups)
    d_net = build_red(rng, input_size=cfg.image_size, channel_div=cfg.channel_div)
    state = TrainState(
        k=0, k_max=cfg.k_max,
        adam_g={p.name: AdamState.for_param(p) for p in g_net.parameters()},
        adam_d={p.name: AdamState.for_param(p) for p in d_net.parameters()},
        spectral=init_spectral_states(d_net, rng),
        lr_g=cfg.lr_g, lr_d=cfg.lr_d, seed=cfg.seed,
    )
    return g_net, d_net, state


def draw_mask(rng, mode, h, w):
    if mode == "square":
        return gen_square_mask(h, w, "random", rng)
    return gen_freeform_mask(FreeFormParams.for_size(h, w), rng)


@dataclass
class Dataset:
    """Training images plus a fixed held-out evaluation set."""

    train_images: np.ndarray          # (M, 3, H, W) float32 in [-1, 1]
    eval_images: np.ndarray           # (E, 3, H, W)
    eval_masks: np.ndarray            # (E, H, W) uint8

    def sample_batch(self, k, seed, batch_size, mask_mode):
        """The batch for step k, a pure function of (seed, k)."""
        if self.train_images.shape[0] == 0:
            raise ContractError("empty training set")
        rng = _rng(seed, _DOMAIN_STEP, k)
        idx = rng.integers(0, self.train_images.shape[0], size=batch_size)
        h, w = self.train_images.shape[2:]
        masks = np.stack([draw_mask(rng, mask_mode, h, w) for _ in range(batch_size)])
        return self.train_images[idx], masks


def _load_ppm_dir(path):
    names = sorted(n for n in os.listdir(path) if n.endswith(".ppm"))
    if not names:
        raise ContractError(f"no .ppm files in {path!r}")
    return np.stack([read_ppm(os.path.join(path, n)) for n in names])


def build_dataset(cfg):
    """Images from data_dir, or deterministic synthetic patterns.

    The held-out pairs use image indices past the training range and masks
    drawn from the evaluation seed domain, fixed for the whole run.
    """
    if cfg.data_dir:
        images = _load_ppm_dir(cfg.data_dir)
        if images.shape[0] <= cfg.eval_count:
            raise ContractError("dataset smaller than the held-out split")
        train = images[:images.shape[0] - cfg.eval_count]
        evals = images[images.shape[0] - cfg.eval_count:]
    else:
        spec = SyntheticSpec(pattern=cfg.synth_pattern, size=cfg.image_size,
                             count=cfg.train_count, seed=cfg.seed)
        train = np.stack([gen_image(spec, i) for i in range(cfg.train_count)])
        evals = np.stack([gen_image(spec, cfg.train_count + i)
                          for i in range(cfg.eval_count)]) if cfg.eval_count else \
            np.zeros((0, 3, cfg.image_size, cfg.image_size), np.float32)
    h, w = train.shape[2:]
    masks = np.stack([draw_mask(_rng(cfg.seed, _DOMAIN_EVAL, i), cfg.mask_mode, h, w)
                      for i in range(evals.shape[0])]) if evals.shape[0] else \
        np.zeros((0, h, w), np.uint8)
    return Dataset(train_images=train, eval_images=evals, eval_masks=masks)


def _weights(cfg):
    return LossWeights(lambda_i=cfg.lambda_i, lambda_adv=cfg.lambda_adv,
                       lambda_c=cfg.lambda_c)


def d_step(batch, g_net, d_net, state, cfg, lr_d):
    """Discriminator update on real images vs composited fakes.

    The generator runs without gradient tracking, so its parameters and
    gradients are untouched here.
    """
    images, masks = batch
    n = images.shape[0]
    with en.no_grad():
        fake_out = pepsi_forward(images, masks, g_net, mode="infer",
                                 cam_mode=cfg.cam_mode, lam=cfg.softmax_scale)
    fakes = composite_output(fake_out.inpaint.data, images, masks)
    d_net.zero_grad()
    scores = red_forward(np.concatenate([images, fakes]), d_net, state.spectral,
                         power_iters=1, update_u=True)
    loss_d = d_hinge_loss(en.take_rows(scores, np.arange(n)),
                          en.take_rows(scores, np.arange(n, 2 * n)))
    loss_d.backward()
    for p in d_net.parameters():
        adam_step(p, state.adam_d[p.name], lr_d)
    return loss_d.item()


def g_step(batch, g_net, d_net, state, cfg, lr_g):
    """Generator update: fresh forward with both decoder paths, inpainting
    L1 plus adversarial term, and the scheduled coarse contribution."""
    images, masks = batch
    w = _weights(cfg)
    out = pepsi_forward(images, masks, g_net, mode="train",
                        cam_mode=cfg.cam_mode, lam=cfg.softmax_scale,
                        coarse_enabled=cfg.coarse_path)
    comp = composite_output(out.inpaint, images, masks)
    scores_fake = red_forward(comp, d_net, state.spectral,
                              power_iters=1, update_u=False)
    lg = g_loss(out.inpaint, images, scores_fake, w)
    lc = coarse_loss(out.coarse, images) if out.coarse is not None else None
    loss_g = lg if lc is None else total_loss(lg, lc, state.k, state.k_max, w)
    g_net.zero_grad()
    d_net.zero_grad()
    loss_g.backward()
    for p in g_net.parameters():
        adam_step(p, state.adam_g[p.name], lr_g)
    return loss_g.item(), lc.item() if lc is not None else 0.0


def train_step(batch, g_net, d_net, state, cfg):
    """One alternating update: discriminator first, then the generator.
    Returns the step's scalar losses; aborts on non-finite values."""
    images, _masks = batch
    if images.shape[0] == 0:
        raise ContractError("empty batch")
    lr_g, lr_d = state.effective_lrs()
    loss_d = d_step(batch, g_net, d_net, state, cfg, lr_d)
    loss_g, loss_coarse = g_step(batch, g_net, d_net, state, cfg, lr_g)
    logs = {"loss_d": loss_d, "loss_g": loss_g, "loss_coarse": loss_coarse}
    if not all(np.isfinite(v) for v in logs.values()):
        raise TrainingAbort(f"non-finite loss at step {state.k}: {logs}")
    state.k += 1
    return logs


def evaluate(g_net, dataset, cfg):
    """Held-out metrics on composited inpainting results."""
    if dataset.eval_images.shape[0] == 0:
        return {"psnr_local": float("nan"), "psnr_global": float("nan"),
                "ssim": float("nan"), "hole_l1": float("nan")}
    reports = []
    hole_l1 = []
    with en.no_grad():
        for img, mask in zip(dataset.eval_images, dataset.eval_masks):
            out = pepsi_forward(img[None], mask[None], g_net, mode="infer",
                                cam_mode=cfg.cam_mode, lam=cfg.softmax_scale)
            comp = composite_output(out.inpaint.data[0], img, mask)
            reports.append(evaluate_pair(comp, img, mask))
            hole = mask.astype(bool)
            if hole.any():
                hole_l1.append(float(np.abs(comp - img)[:, hole].mean()))
    return {
        "psnr_local": float(np.mean([r.psnr_local for r in reports])),
        "psnr_global": float(np.mean([r.psnr_global for r in reports])),
        "ssim": float(np.mean([r.ssim for r in reports])),
        "hole_l1": float(np.mean(hole_l1)) if hole_l1 else float("nan"),
    }


# ---------------------------------------------------------------------------
# persistence of optimizer state


def _adam_entries(prefix, states):
    out = {}
    for name in sorted(states):
        s = states[name]
        out[f"{prefix}.{name}.m"] = s.m
        out[f"{prefix}.{name}.v"] = s.v
        out[f"{prefix}.{name}.t"] = np.uint32(s.t)
    return out


def _meta_entries(state):
    return {
        "meta.k": np.uint32(state.k),
        "meta.k_max": np.uint32(state.k_max),
        "meta.seed": np.uint32(state.seed),
        "meta.lr_g": np.float64(state.lr_g),
        "meta.lr_d": np.float64(state.lr_d),
    }


def save_train_checkpoint(stem, g_net, d_net, state):
    """Write <stem>.g.peps and <stem>.d.peps including optimizer state."""
    g_entries = _meta_entries(state)
    g_entries.update(_adam_entries("adam", state.adam_g))
    save_checkpoint(stem + ".g.peps", g_net, state=g_entries)
    d_entries = _meta_entries(state)
    d_entries.update(_adam_entries("adam", state.adam_d))
    for name in sorted(state.spectral):
        d_entries[f"sn.{name}.u"] = state.spectral[name].u
    save_checkpoint(stem + ".d.peps", d_net, state=d_entries)
    return stem + ".g.peps", stem + ".d.peps"


def _restore_adam(entries, params):
    states = {}
    for p in params:
        states[p.name] = AdamState(
            m=entries[f"adam.{p.name}.m"],
            v=entries[f"adam.{p.name}.v"],
            t=int(entries[f"adam.{p.name}.t"]),
        )
    return states


def load_train_checkpoint(stem):
    """Rebuild (g_net, d_net, state) from a checkpoint pair."""
    g_net, g_entries = load_checkpoint(stem + ".g.peps")
    d_net, d_entries = load_checkpoint(stem + ".d.peps", expect_variant="red")
    if g_entries is None or d_entries is None:
        raise ContractError("checkpoint pair lacks training state")
    if int(g_entries["meta.k"]) != int(d_entries["meta.k"]):
        raise ContractError("checkpoint pair disagrees on the iteration counter")
    spectral = {}
    for key, arr in d_entries.items():
        if key.startswith("sn.") and key.endswith(".u"):
            spectral[key[3:-2]] = SpectralState(u=arr)
    state = TrainState(
        k=int(g_entries["meta.k"]),
        k_max=int(g_entries["meta.k_max"]),
        adam_g=_restore_adam(g_entries, g_net.parameters()),
        adam_d=_restore_adam(d_entries, d_net.parameters()),
        spectral=spectral,
        lr_g=float(g_entries["meta.lr_g"]),
        lr_d=float(g_entries["meta.lr_d"]),
        seed=int(g_entries["meta.seed"]),
    )
    return g_net, d_net, state


def train_loop(dataset, cfg, g_net, d_net, state, out_dir):
    """Run train_step up to k_max, writing periodic checkpoints and the
    metric log. Returns the metric rows (also written to metrics.csv)."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "metrics.csv")
    fresh = state.k == 0 or not os.path.exists(csv_path)
    rows = []
    with open(csv_path, "w" if fresh else "a", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if fresh:
            writer.writerow(METRIC_COLUMNS)
        while state.k < state.k_max:
            batch = dataset.sample_batch(state.k, state.seed, cfg.batch_size,
                                         cfg.mask_mode)
            try:
                logs = train_step(batch, g_net, d_net, state, cfg)
            except (OSError, TrainingAbort) as exc:
                raise type(exc)(f"step {state.k}: {exc}") from exc
            k = state.k
            if k % cfg.eval_interval == 0 or k == state.k_max:
                ev = evaluate(g_net, dataset, cfg)
                row = {"k": k, **logs, **{c: ev[c] for c in
                                          ("psnr_local", "psnr_global", "ssim")}}
                writer.writerow([row[c] for c in METRIC_COLUMNS])
                f.flush()
                rows.append(row)
            if k % cfg.checkpoint_interval == 0 or k == state.k_max:
                stem = os.path.join(out_dir, f"ckpt_{k:06d}")
                save_train_checkpoint(stem, g_net, d_net, state)
    return rows
