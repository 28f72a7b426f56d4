"""Network graphs: shared encoder, parallel decoder paths, Diet units, and
the region ensemble discriminator, plus parameter accounting.

The generator comes in two variants. "pepsi" ends its encoder with four
standard dilated convolutions; "diet_pepsi" replaces them with residual
units (a 3x3 rate-adaptive dilated convolution followed by a 1x1
convolution) that share one kernel bank across dilation rates. Channel
counts follow the reference tables and can be divided down for desk-scale
experiments via channel_div.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import engine as en
from .attention import cam_forward, cam_mask_for
from .engine import ContractError, Parameter, Tensor
from .masks import compose_batch
from .optim import SpectralState, spectral_normalize, spectral_normalize_rows

VARIANTS = ("pepsi", "diet_pepsi", "red")

# encoder stack: (kernel, stride, out_channels); a trailing dilated stage
# (PEPSI) or DPU stack (Diet) follows
ENCODER_CONVS = ((5, 1, 32), (3, 2, 64), (3, 1, 64),
                 (3, 2, 128), (3, 1, 128), (3, 2, 256))
PEPSI_DILATION_RATES = (2, 4, 8, 1)
DEFAULT_DPU_RATES = (1, 2, 4, 8)

# decoder stack: conv channel pairs with nearest-neighbor x2 upsampling
# between stages, then the 3-channel output conv clipped to [-1, 1]
DECODER_STAGES = (128, 64, 32, 16)

RED_CHANNELS = (64, 128, 256, 256, 256, 512)
LEAKY_SLOPE = 0.2


@dataclass
class DpuConfig:
    """Diet unit stack: n units at the given dilation rates, optionally
    group-convolved (with channel shuffle between the two layers)."""

    n: int = 4
    rates: tuple = DEFAULT_DPU_RATES
    groups: int = 1
    channels: int = 256

    def __post_init__(self):
        self.rates = tuple(int(r) for r in self.rates)
        if self.n != len(self.rates):
            raise ContractError("rate list length must equal the unit count")
        if self.groups not in (1, 2, 4):
            raise ContractError("groups must be 1, 2 or 4")
        if self.channels % self.groups:
            raise ContractError("channels must be divisible by groups")
        if len(set(self.rates)) != len(self.rates):
            raise ContractError("dilation rates must be distinct")


@dataclass
class RateAdaptiveBank:
    """One shared 3x3 kernel plus per-rate scale/shift modulation pairs."""

    w: Parameter
    gammas: dict
    betas: dict
    rates: tuple

    def modulated(self, d):
        if d not in self.gammas:
            raise ContractError(f"rate {d} not in bank rates {self.rates}")
        return en.add(en.mul(self.gammas[d], self.w), self.betas[d])


@dataclass
class NetOutput:
    coarse: Optional[Tensor]
    inpaint: Tensor


class NetworkParams:
    """Named parameter set for one variant, addressable for checkpointing.

    Bias tensors use the ".b" name suffix; count_params relies on it.
    """

    def __init__(self, variant, dpu=None):
        if variant not in VARIANTS:
            raise ContractError(f"unknown variant {variant!r}")
        self.variant = variant
        self.dpu = dpu
        self._params = {}

    def add(self, name, data):
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        p = Parameter(data, name)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params)

    def parameters(self):
        return list(self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def bank(self, prefix="enc.bank"):
        rates = self.dpu.rates
        return RateAdaptiveBank(
            w=self[f"{prefix}.w"],
            gammas={d: self[f"{prefix}.rate{d}.gamma"] for d in rates},
            betas={d: self[f"{prefix}.rate{d}.beta"] for d in rates},
            rates=rates,
        )

    @classmethod
    def from_entries(cls, variant, entries, dpu=None):
        net = cls(variant, dpu=dpu)
        for name, data in entries.items():
            net.add(name, data)
        return net


def _he_init(rng, k, cin, cout, dtype):
    std = np.sqrt(2.0 / (k * k * cin))
    return rng.normal(0.0, std, size=(k, k, cin, cout)).astype(dtype)


def _add_conv(net, rng, name, k, cin, cout, dtype):
    net.add(f"{name}.w", _he_init(rng, k, cin, cout, dtype))
    net.add(f"{name}.b", np.zeros(cout, dtype=dtype))


def build_generator(variant, rng, channel_div=1, in_channels=4,
                    dpu_rates=DEFAULT_DPU_RATES, groups=1, dtype=np.float32):
    """Construct encoder+decoder parameters for either generator variant.

    gamma starts at 1 and beta at 0, so every rate of a fresh Diet bank
    reproduces the shared kernel exactly. Biases start at zero.
    """
    div = int(channel_div)
    chans = [c // div for c in (32, 64, 64, 128, 128, 256)]
    if min(chans) < 1:
        raise ContractError("channel_div too large for the channel table")
    c_feat = chans[-1]

    dpu = None
    if variant == "diet_pepsi":
        dpu = DpuConfig(n=len(dpu_rates), rates=tuple(dpu_rates),
                        groups=groups, channels=c_feat)
    net = NetworkParams(variant, dpu=dpu)

    cin = in_channels
    for i, ((k, _s, _c), cout) in enumerate(zip(ENCODER_CONVS, chans)):
        _add_conv(net, rng, f"enc.conv{i}", k, cin, cout, dtype)
        cin = cout

    if variant == "pepsi":
        for i, d in enumerate(PEPSI_DILATION_RATES):
            _add_conv(net, rng, f"enc.dil{i}", 3, c_feat, c_feat, dtype)
    elif variant == "diet_pepsi":
        cin_g = c_feat // dpu.groups
        net.add("enc.bank.w", _he_init(rng, 3, cin_g, c_feat, dtype))
        for d in dpu.rates:
            net.add(f"enc.bank.rate{d}.gamma", np.ones((1, 1, cin_g, c_feat), dtype=dtype))
            net.add(f"enc.bank.rate{d}.beta", np.zeros((1, 1, cin_g, c_feat), dtype=dtype))
        for i in range(dpu.n):
            net.add(f"enc.dpu{i}.rac.b", np.zeros(c_feat, dtype=dtype))
            net.add(f"enc.dpu{i}.pw.w", _he_init(rng, 1, cin_g, c_feat, dtype))
            net.add(f"enc.dpu{i}.pw.b", np.zeros(c_feat, dtype=dtype))
    else:
        raise ContractError(f"not a generator variant: {variant!r}")

    cin = c_feat
    idx = 0
    for stage in DECODER_STAGES:
        cout = max(stage // div, 1)
        _add_conv(net, rng, f"dec.conv{idx}", 3, cin, cout, dtype)
        _add_conv(net, rng, f"dec.conv{idx + 1}", 3, cout, cout, dtype)
        cin = cout
        idx += 2
    _add_conv(net, rng, "dec.out", 3, cin, 3, dtype)
    return net


def red_grid(size):
    """Final spatial extent after the six stride-2 stages."""
    for _ in range(6):
        size = -(-size // 2)
    return size


def build_red(rng, input_size=256, in_channels=3, channel_div=1, dtype=np.float32):
    """Region ensemble discriminator: six 5x5 stride-2 convolutions, then an
    independent affine regressor per cell of the final grid."""
    div = int(channel_div)
    net = NetworkParams("red")
    cin = in_channels
    for i, cout in enumerate(RED_CHANNELS):
        cout = max(cout // div, 1)
        _add_conv(net, rng, f"red.conv{i}", 5, cin, cout, dtype)
        cin = cout
    g = red_grid(input_size)
    cells = g * g
    std = np.sqrt(2.0 / cin)
    net.add("red.fc.w", rng.normal(0.0, std, size=(cells, cin)).astype(dtype))
    net.add("red.fc.b", np.zeros(cells, dtype=dtype))
    return net


def init_spectral_states(net, rng):
    """One warmed power-iteration vector per convolution layer of the RED.

    The per-cell regressor bank is normalized row-wise (each cell is its own
    single-row layer with an exact spectral norm), so it carries no state.
    """
    return {name: SpectralState.for_matrix(net[name], rng)
            for name in net.names()
            if name.endswith(".w") and name != "red.fc.w"}


# ---------------------------------------------------------------------------
# forward graphs


def rate_adaptive_conv(x, bank, d, groups=1, bias=None):
    """Dilated convolution with the bank kernel modulated for rate d:
    scale by gamma_d, shift by beta_d (broadcast over the 3x3 taps)."""
    return en.conv2d(x, bank.modulated(d), bias=bias, stride=1,
                     dilation=d, padding="reflect", groups=groups)


def dpu_forward(x, net, unit_index):
    """Residual Diet unit: rate-adaptive 3x3, ELU, 1x1, skip connection.
    With groups > 1 both layers are group convolutions and the channels are
    shuffled between them."""
    cfg = net.dpu
    if unit_index >= cfg.n:
        raise ContractError("unit index out of range")
    d = cfg.rates[unit_index]
    bank = net.bank()
    h = rate_adaptive_conv(x, bank, d, groups=cfg.groups,
                           bias=net[f"enc.dpu{unit_index}.rac.b"])
    h = en.elu(h)
    if cfg.groups > 1:
        h = en.channel_shuffle(h, cfg.groups)
    h = en.conv2d(h, net[f"enc.dpu{unit_index}.pw.w"],
                  bias=net[f"enc.dpu{unit_index}.pw.b"],
                  stride=1, dilation=1, padding="reflect", groups=cfg.groups)
    return en.add(x, h)


def encoder_forward(x, net):
    """Strided 4-channel encoder down to H/8 x W/8 feature maps."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    h_in, w_in = x.data.shape[2], x.data.shape[3]
    if h_in % 8 or w_in % 8:
        raise ContractError("encoder input dims must be divisible by 8")
    h = x
    for i, (k, stride, _c) in enumerate(ENCODER_CONVS):
        h = en.elu(en.conv2d(h, net[f"enc.conv{i}.w"], bias=net[f"enc.conv{i}.b"],
                             stride=stride, padding="reflect"))
    if net.variant == "pepsi":
        for i, d in enumerate(PEPSI_DILATION_RATES):
            h = en.elu(en.conv2d(h, net[f"enc.dil{i}.w"], bias=net[f"enc.dil{i}.b"],
                                 stride=1, dilation=d, padding="reflect"))
    else:
        for i in range(net.dpu.n):
            h = dpu_forward(h, net, i)
    return h


def decoder_forward(f, net):
    """Decode features back to a 3-channel image in [-1, 1]."""
    h = f if isinstance(f, Tensor) else Tensor(f)
    idx = 0
    for stage_i in range(len(DECODER_STAGES)):
        h = en.elu(en.conv2d(h, net[f"dec.conv{idx}.w"], bias=net[f"dec.conv{idx}.b"],
                             padding="reflect"))
        h = en.elu(en.conv2d(h, net[f"dec.conv{idx + 1}.w"], bias=net[f"dec.conv{idx + 1}.b"],
                             padding="reflect"))
        if stage_i < 3:
            h = en.upsample_nearest2x(h)
        idx += 2
    return en.clip_unit(en.conv2d(h, net["dec.out.w"], bias=net["dec.out.b"],
                                  padding="reflect"))


def pepsi_apply(x, mask, net, mode="train", cam_mode="euclidean", lam=10.0,
                coarse_enabled=True):
    """Run the generator from an already-composed 4-channel input tensor."""
    if mode not in ("train", "infer"):
        raise ContractError(f"unknown mode {mode!r}")
    f = encoder_forward(x, net)
    mask_small = cam_mask_for(f, mask)
    coarse = None
    if mode == "train" and coarse_enabled:
        coarse = decoder_forward(f, net)
    rebuilt = cam_forward(f, mask_small, mode=cam_mode, lam=lam)
    inpaint = decoder_forward(rebuilt, net)
    return NetOutput(coarse=coarse, inpaint=inpaint)


def pepsi_forward(image, mask, net, mode="train", cam_mode="euclidean",
                  lam=10.0, coarse_enabled=True):
    """Full generator pass from an image batch and hole masks.

    image: (N, 3, H, W) in [-1, 1]; mask: (N, H, W) or (N, 1, H, W) binary.
    In train mode both decoder paths run (they share one weight set); in
    infer mode only the inpainting path runs.
    """
    image = np.asarray(image)
    mask = np.asarray(mask)
    if mask.ndim == 4 and mask.shape[1] == 1:
        mask = mask[:, 0]
    x = Tensor(compose_batch(image, mask))
    return pepsi_apply(x, mask, net, mode=mode, cam_mode=cam_mode, lam=lam,
                       coarse_enabled=coarse_enabled)


def red_forward(image, net, spectral, power_iters=1, update_u=True):
    """Score map from the region ensemble discriminator.

    Six spectrally normalized 5x5 stride-2 convolutions with leaky-ReLU,
    then one independent affine regressor per cell of the final grid (no
    final activation). The regressor bank normalizes per row so cells stay
    independent. Zero padding keeps ceil(H/2) sizes per stage.
    """
    h = image if isinstance(image, Tensor) else Tensor(np.asarray(image))
    if h.data.ndim != 4:
        raise ContractError("red_forward expects an NCHW batch")
    for i in range(len(RED_CHANNELS)):
        w = spectral_normalize(net[f"red.conv{i}.w"], spectral[f"red.conv{i}.w"],
                               power_iters=power_iters, update=update_u)
        h = en.leaky_relu(en.conv2d(h, w, bias=net[f"red.conv{i}.b"],
                                    stride=2, padding="zero"), slope=LEAKY_SLOPE)
    n, c, gh, gw = h.data.shape
    cells = gh * gw
    wfc = net["red.fc.w"]
    if wfc.data.shape != (cells, c):
        raise ContractError(
            f"input size yields a {gh}x{gw} grid but the regressor bank has "
            f"shape {wfc.data.shape}")
    wn = spectral_normalize_rows(wfc)
    flat = en.reshape(h, (n, c, cells))
    scores = en.tsum(en.mul(flat, wn.T), axis=1)
    scores = en.add(scores, net["red.fc.b"])
    return en.reshape(scores, (n, 1, gh, gw))


# ---------------------------------------------------------------------------
# parameter accounting


def count_params(net, include_bias=True):
    """Exact integer parameter counts, per tensor and aggregated.

    Returns a dict with per_layer counts, the total, and the dilated-stack
    or DPU-stack subtotal for generator variants. Bias tensors (".b" names)
    are dropped when include_bias is false.
    """
    per_layer = {}
    for name in net.names():
        if not include_bias and name.endswith(".b"):
            continue
        per_layer[name] = int(net[name].data.size)
    total = sum(per_layer.values())
    out = {"per_layer": per_layer, "total": total}
    if net.variant == "pepsi":
        out["dilated_stack"] = sum(v for k, v in per_layer.items()
                                   if k.startswith("enc.dil"))
    elif net.variant == "diet_pepsi":
        out["dpu_stack"] = sum(v for k, v in per_layer.items()
                               if k.startswith(("enc.bank", "enc.dpu")))
    return out
