"""Hole-mask generation and network-input composition.

Masks are (H, W) uint8 arrays, 1 = hole (foreground), 0 = background.
All generators take an explicit seeded numpy Generator and are pure
functions of it, so concurrent callers just use independent generators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import ContractError


@dataclass
class FreeFormParams:
    """Stroke model for free-form holes: random polylines dilated by a disk.

    Defaults are calibrated for 256x256 canvases (hole fraction stays inside
    [0.05, 0.50] for >= 99% of seeds); use for_size() to scale the
    pixel-unit fields proportionally for other resolutions.
    """

    num_strokes: tuple = (2, 5)
    max_vertices: int = 12
    brush_width: tuple = (14.0, 40.0)
    max_angle_step: float = math.pi / 2
    max_segment_length: float = 40.0
    height: int = 256
    width: int = 256

    def __post_init__(self):
        if self.num_strokes[0] > self.num_strokes[1] or self.num_strokes[0] < 0:
            raise ContractError("num_strokes range is empty or negative")
        if self.brush_width[0] > self.brush_width[1] or self.brush_width[0] <= 0:
            raise ContractError("brush_width range is empty or non-positive")
        if self.max_vertices < 1 or self.max_segment_length <= 0:
            raise ContractError("max_vertices and max_segment_length must be positive")
        if self.height < 1 or self.width < 1:
            raise ContractError("canvas dims must be positive")
        if self.brush_width[1] >= min(self.height, self.width) / 2:
            raise ContractError("max brush width must stay below min(H,W)/2")

    @classmethod
    def for_size(cls, height, width, **overrides):
        scale = min(height, width) / 256.0
        base = dict(
            num_strokes=(2, 5),
            max_vertices=12,
            brush_width=(max(14.0 * scale, 1.0), max(40.0 * scale, 2.0)),
            max_angle_step=math.pi / 2,
            max_segment_length=max(40.0 * scale, 2.0),
            height=height,
            width=width,
        )
        base.update(overrides)
        return cls(**base)


def gen_square_mask(h, w, box="random", rng=None):
    """Axis-aligned rectangular hole.

    box is (top, left, height, width) or "random", which draws the side
    uniformly in [h/4, h/2] and places the square anywhere it fits.
    """
    if box == "random":
        if rng is None:
            raise ContractError("random box needs a generator")
        base = min(h, w)
        side = int(rng.integers(base // 4, base // 2 + 1))
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        box = (top, left, side, side)
    top, left, bh, bw = box
    if top < 0 or left < 0 or bh < 0 or bw < 0 or top + bh > h or left + bw > w:
        raise ContractError(f"box {box} out of bounds for {h}x{w}")
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[top:top + bh, left:left + bw] = 1
    return mask


def _stamp_segment(mask, p0, p1, radius):
    """Set every pixel within `radius` (Euclidean) of segment p0-p1."""
    h, w = mask.shape
    r = radius + 1.0
    y0 = max(int(math.floor(min(p0[0], p1[0]) - r)), 0)
    y1 = min(int(math.ceil(max(p0[0], p1[0]) + r)), h - 1)
    x0 = max(int(math.floor(min(p0[1], p1[1]) - r)), 0)
    x1 = min(int(math.ceil(max(p0[1], p1[1]) + r)), w - 1)
    if y0 > y1 or x0 > x1:
        return
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    dy = p1[0] - p0[0]
    dx = p1[1] - p0[1]
    seg2 = dy * dy + dx * dx
    if seg2 == 0.0:
        d2 = (yy - p0[0]) ** 2 + (xx - p0[1]) ** 2
    else:
        t = ((yy - p0[0]) * dy + (xx - p0[1]) * dx) / seg2
        t = np.clip(t, 0.0, 1.0)
        d2 = (yy - (p0[0] + t * dy)) ** 2 + (xx - (p0[1] + t * dx)) ** 2
    mask[y0:y1 + 1, x0:x1 + 1] |= (d2 <= radius * radius)


def draw_strokes(p, rng):
    """Sample the stroke set: (vertex list, brush radius) per stroke.

    Each stroke starts at a uniform point and walks up to max_vertices
    points, perturbing the heading by at most max_angle_step per segment.
    Vertex counts draw from [max_vertices/2, max_vertices] and segment
    lengths from [max_segment_length/2, max_segment_length]; vertices clamp
    to the canvas. These choices keep hole areas in a useful band.
    """
    strokes = []
    n_strokes = int(rng.integers(p.num_strokes[0], p.num_strokes[1] + 1))
    v_lo = max(1, p.max_vertices // 2)
    for _ in range(n_strokes):
        brush = float(rng.uniform(p.brush_width[0], p.brush_width[1]))
        n_vertices = int(rng.integers(v_lo, p.max_vertices + 1))
        y = float(rng.uniform(0, p.height))
        x = float(rng.uniform(0, p.width))
        angle = float(rng.uniform(0, 2 * math.pi))
        points = [(y, x)]
        for _ in range(n_vertices - 1):
            angle += float(rng.uniform(-p.max_angle_step, p.max_angle_step))
            length = float(rng.uniform(p.max_segment_length / 2.0, p.max_segment_length))
            y = min(max(y + length * math.sin(angle), 0.0), p.height - 1.0)
            x = min(max(x + length * math.cos(angle), 0.0), p.width - 1.0)
            points.append((y, x))
        strokes.append((points, brush / 2.0))
    return strokes


def rasterize_strokes(strokes, height, width):
    """Binary union of the disk-dilated strokes: a pixel is hole iff its
    Euclidean distance to some stroke segment is at most that stroke's
    radius (single-vertex strokes stamp a disk)."""
    mask = np.zeros((height, width), dtype=np.uint8)
    for points, radius in strokes:
        if len(points) == 1:
            _stamp_segment(mask, points[0], points[0], radius)
        for a, b in zip(points[:-1], points[1:]):
            _stamp_segment(mask, a, b, radius)
    return mask


def gen_freeform_mask(p, rng):
    """Union of disk-dilated random polyline strokes. Degenerate parameter
    choices just give small or empty holes."""
    return rasterize_strokes(draw_strokes(p, rng), p.height, p.width)


def compose_input(image, mask):
    """Stack a hole-blanked image with its mask channel.

    image: (3, H, W) in [-1, 1]; mask: (H, W) binary. Returns (4, H, W)
    where channels 0-2 are the image with hole pixels set to 0.0 (mid-gray)
    and channel 3 is the mask. Idempotent on the image channels.
    """
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractError(f"expected (3,H,W) image, got {image.shape}")
    if mask.shape != image.shape[1:]:
        raise ContractError(f"mask {mask.shape} does not match image {image.shape}")
    if image.min() < -1.0 - 1e-6 or image.max() > 1.0 + 1e-6:
        raise ContractError("image values must lie in [-1, 1]")
    m = mask.astype(image.dtype)
    out = np.empty((4,) + image.shape[1:], dtype=image.dtype)
    out[:3] = image * (1.0 - m)
    out[3] = m
    return out


def compose_batch(images, masks):
    """Vectorized compose_input over (N,3,H,W) images and (N,H,W) masks."""
    images = np.asarray(images)
    masks = np.asarray(masks)
    if masks.ndim == 4 and masks.shape[1] == 1:
        masks = masks[:, 0]
    m = masks[:, None].astype(images.dtype)
    out = np.empty((images.shape[0], 4) + images.shape[2:], dtype=images.dtype)
    out[:, :3] = images * (1.0 - m)
    out[:, 3:4] = m
    return out


def downsample_mask(mask, h, w):
    """Nearest-neighbor mask reduction to (h, w), top-left convention."""
    mask = np.asarray(mask)
    sh = mask.shape[0] // h
    sw = mask.shape[1] // w
    if sh * h != mask.shape[0] or sw * w != mask.shape[1]:
        raise ContractError("mask dims must be integer multiples of the target")
    return mask[::sh, ::sw]
