"""Contextual attention: rebuild hole-region feature patches from background.

Two similarity modes are supported. "cosine" scores patch pairs by the
normalized inner product, which is blind to patch magnitude; "euclidean"
scores them by a truncated distance statistic, tanh(-(d - mean d) / std d),
computed per foreground patch over the background set. Scores feed a scaled
softmax and the foreground patch is rebuilt as the weighted sum of
background patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as en
from .engine import ContractError, Tensor
from .masks import downsample_mask

SIGMA_FLOOR = 1e-8
NORM_FLOOR = 1e-12


@dataclass
class PatchSet:
    """3x3 feature patches with their source-center coordinates."""

    patches: np.ndarray  # (P, C, 3, 3)
    coords: np.ndarray   # (P, 2) as (row, col)
    role: str            # "foreground" | "background"


def _extract_patches(features):
    """All stride-1 3x3 patches of a (C, h, w) map, reflect padded."""
    c, h, w = features.shape
    xp = np.pad(features, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    patches = np.empty((h * w, c, 3, 3), dtype=features.dtype)
    for i in range(3):
        for j in range(3):
            patches[:, :, i, j] = xp[:, i:i + h, j:j + w].reshape(c, h * w).T
    return patches


def split_patches(features, mask_small):
    """Partition the patch set of one feature map by the hole mask.

    features: (C, h, w) or (1, C, h, w); mask_small: (h, w) binary at
    feature resolution. A patch is foreground iff the mask is 1 at its
    center. The background set must be non-empty.
    """
    feat = np.asarray(features.data if isinstance(features, Tensor) else features)
    if feat.ndim == 4:
        if feat.shape[0] != 1:
            raise ContractError("split_patches works on a single feature map")
        feat = feat[0]
    mask_small = np.asarray(mask_small)
    if mask_small.shape != feat.shape[1:]:
        raise ContractError("mask_small must match the feature resolution")
    patches = _extract_patches(feat)
    flat = mask_small.reshape(-1).astype(bool)
    if not (~flat).any():
        raise ContractError("background patch set is empty")
    h, w = mask_small.shape
    coords = np.stack(np.divmod(np.arange(h * w), w), axis=1)
    fg = PatchSet(patches[flat], coords[flat], "foreground")
    bg = PatchSet(patches[~flat], coords[~flat], "background")
    return fg, bg


def _as_patch_matrix(x):
    if isinstance(x, PatchSet):
        x = x.patches
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(x.shape[0], -1)


def cosine_scores(f, background):
    """Normalized inner products of one patch against the background set.

    Zero-norm patches score 0 by convention (uninformative rather than a
    division error).
    """
    b = _as_patch_matrix(background)
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    fn = f / max(np.linalg.norm(f), NORM_FLOOR)
    bnorm = np.maximum(np.linalg.norm(b, axis=1), NORM_FLOOR)
    return (b @ fn) / bnorm


def truncated_distance_scores(f, background):
    """tanh(-(d - mean d) / std d) over the background set, d Euclidean.

    mean and population std are taken over the background patches for this
    one foreground patch; std is floored at 1e-8 so equidistant sets give a
    uniform score of 0. Values lie strictly inside (-1, 1).
    """
    b = _as_patch_matrix(background)
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    d = np.linalg.norm(b - f[None, :], axis=1)
    sigma = max(float(d.std()), SIGMA_FLOOR)
    return np.tanh(-(d - d.mean()) / sigma)


def attention_weights(scores, lam):
    """Scaled softmax over a score vector; sums to 1."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ContractError("empty score vector")
    if not np.all(np.isfinite(scores)):
        raise ContractError("scores must be finite")
    z = lam * scores
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _coverage(fg_rc, h, w):
    """How many reconstructed patches cover each pixel (constant per mask)."""
    cov = np.zeros((h, w), dtype=np.int64)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            yy = fg_rc[:, 0] + dy
            xx = fg_rc[:, 1] + dx
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            np.add.at(cov, (yy[ok], xx[ok]), 1)
    return cov


def _fold_patches(rec, fg_rc, c, h, w, fg_mask):
    """Scatter reconstructed (F, 9C) patches back onto a (1, C, h, w) map.

    Overlapping patch cells are averaged by coverage count; cells falling on
    background positions are dropped (those positions pass through). Linear
    in rec, so the backward pass is the transposed gather.
    """
    cov = _coverage(fg_rc, h, w).astype(rec.data.dtype)
    cov_safe = np.maximum(cov, 1.0)
    scale = (fg_mask.astype(rec.data.dtype) / cov_safe)[None, :, :]

    taps = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            yy = fg_rc[:, 0] + dy
            xx = fg_rc[:, 1] + dx
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            taps.append((dy + 1, dx + 1, ok, yy[ok], xx[ok]))

    def fwd(rd):
        r4 = rd.reshape(-1, 3, 3, c)
        acc = np.zeros((c, h, w), dtype=rd.dtype)
        for i, j, ok, yy, xx in taps:
            acc[:, yy, xx] += r4[ok, i, j, :].T
        return (acc * scale)[None]

    def bwd(g):
        gs = g[0] * scale
        dr = np.zeros((fg_rc.shape[0], 3, 3, c), dtype=g.dtype)
        for i, j, ok, yy, xx in taps:
            dr[ok, i, j, :] = gs[:, yy, xx].T
        return (dr.reshape(fg_rc.shape[0], -1),)

    return en._node(fwd(rec.data), (rec,), bwd, "fold_patches")


def _cam_scores(fg, bg, mode):
    """Score matrix (F, J) between foreground and background patch rows."""
    if mode == "cosine":
        fn = en.div(fg, en.clamp_min(en.sqrt(en.tsum(en.mul(fg, fg), axis=1, keepdims=True)), NORM_FLOOR))
        bn = en.div(bg, en.clamp_min(en.sqrt(en.tsum(en.mul(bg, bg), axis=1, keepdims=True)), NORM_FLOOR))
        return en.matmul(fn, bn.T)
    if mode == "euclidean":
        f2 = en.tsum(en.mul(fg, fg), axis=1, keepdims=True)
        b2 = en.tsum(en.mul(bg, bg), axis=1, keepdims=True)
        cross = en.matmul(fg, bg.T)
        d2 = en.clamp_min(f2 + b2.T - 2.0 * cross, 0.0)
        d = en.sqrt(d2)
        m = en.tmean(d, axis=1, keepdims=True)
        centered = d - m
        sigma = en.sqrt(en.tmean(en.mul(centered, centered), axis=1, keepdims=True))
        return en.tanh(en.div(en.neg(centered), en.clamp_min(sigma, SIGMA_FLOOR)))
    raise ContractError(f"unknown attention mode {mode!r}")


def cam_forward(features, mask_small, mode="euclidean", lam=10.0):
    """Rebuild hole-region patches of a feature map from its background.

    features: Tensor (N, C, h, w); mask_small: (h, w) or (N, h, w) binary at
    feature resolution (use downsample_mask to get there). Background
    positions pass through unchanged; the output has the input dims and is
    differentiable with respect to features.
    """
    features = features if isinstance(features, Tensor) else Tensor(features)
    if features.data.ndim != 4:
        raise ContractError("cam_forward expects an NCHW feature tensor")
    n, c, h, w = features.data.shape
    mask_small = np.asarray(mask_small)
    if mask_small.ndim == 2:
        mask_small = np.broadcast_to(mask_small, (n, h, w))
    if mask_small.shape != (n, h, w):
        raise ContractError("mask_small must be (h,w) or (N,h,w) at feature scale")

    en._bump("cam_forward")
    if not mask_small.any():
        return features

    items = []
    for b in range(n):
        flat = mask_small[b].reshape(-1).astype(bool)
        item = en.take_rows(features, np.array([b]))
        if not flat.any():
            items.append(item)
            continue
        if flat.all():
            raise ContractError("background patch set is empty")
        fg_idx = np.flatnonzero(flat)
        bg_idx = np.flatnonzero(~flat)
        fg_rc = np.stack(np.divmod(fg_idx, w), axis=1)

        patches = en.reshape(en.unfold(item, k=3), (h * w, 9 * c))
        fg = en.take_rows(patches, fg_idx)
        bg = en.take_rows(patches, bg_idx)
        weights = en.softmax(lam * _cam_scores(fg, bg, mode), axis=1)
        rebuilt = en.matmul(weights, bg)
        folded = _fold_patches(rebuilt, fg_rc, c, h, w, mask_small[b])
        keep = (1.0 - mask_small[b].astype(features.data.dtype))[None, None]
        items.append(en.add(en.mul(item, keep), folded))
    if n == 1:
        return items[0]
    return en.concat0(items)


def cam_mask_for(features, mask):
    """Downsample a full-resolution mask batch to the feature resolution."""
    n, _, h, w = features.data.shape if isinstance(features, Tensor) else features.shape
    mask = np.asarray(mask)
    if mask.ndim == 4 and mask.shape[1] == 1:
        mask = mask[:, 0]
    if mask.ndim == 2:
        return downsample_mask(mask, h, w)
    return np.stack([downsample_mask(mask[i], h, w) for i in range(mask.shape[0])])
