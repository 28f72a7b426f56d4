"""Central-difference gradient verification for every differentiable op and
for a small end-to-end generator graph.

All checks run in float64. Random draws steer clear of non-differentiable
points (clip boundaries, L1 ties, hinge kinks, softmax saturation); the
spectral-normalized discriminator weights are checked only through the
input path, because the normalizer is constant by construction in backprop.
"""

from __future__ import annotations

import numpy as np

from . import engine as en
from .attention import cam_forward
from .engine import ContractError, Tensor
from .losses import composite_output, d_hinge_loss, g_adv_loss
from .nets import build_generator, build_red, dpu_forward, init_spectral_states, pepsi_apply, red_forward
from .masks import compose_input, gen_square_mask


def grad_check(f, x, eps=1e-4):
    """Max relative error between backprop and central differences.

    f maps a Tensor to a scalar Tensor and must be deterministic; x supplies
    the evaluation point (promoted to float64). Per element the error is
    |analytic - numeric| / max(1, |numeric|); the max over elements returns.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ContractError("eps must lie in [1e-6, 1e-3]")
    base = x.data if isinstance(x, Tensor) else np.asarray(x)
    xt = Tensor(base.astype(np.float64), requires_grad=True)
    out = f(xt)
    if out.data.size != 1:
        raise ContractError("f must produce a scalar")
    out.backward()
    analytic = xt.grad.copy()
    numeric = np.empty_like(analytic)
    flat = xt.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(xt).item()
        flat[i] = orig - eps
        f_minus = f(xt).item()
        flat[i] = orig
        nflat[i] = (f_plus - f_minus) / (2.0 * eps)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(rel.max())


def _away_from(x, points, margin):
    """Nudge values off the listed non-differentiable points."""
    for p in points:
        close = np.abs(x - p) < margin
        x = x + np.where(close, 2 * margin, 0.0)
    return x


DEFAULT_TOL = 1e-3


def suite_checks():
    """(name, callable) pairs; each callable returns a max relative error."""
    rng = np.random.default_rng(20240901)

    def rand(*shape, scale=1.0):
        return rng.normal(0.0, scale, size=shape)

    checks = []

    def check(name):
        def deco(fn):
            checks.append((name, fn))
            return fn
        return deco

    @check("conv2d reflect stride1 dilation1 (x, w, b)")
    def _():
        w = Tensor(rand(3, 3, 3, 4) * 0.4, requires_grad=True)
        b = Tensor(rand(4) * 0.1, requires_grad=True)
        x0 = rand(2, 3, 6, 6)

        def f(x):
            return en.tmean(en.conv2d(x, w, bias=b))
        e1 = grad_check(f, Tensor(x0))
        xt = Tensor(x0)

        def fw(wv):
            return en.tmean(en.conv2d(xt, wv, bias=b))
        e2 = grad_check(fw, w)

        def fb(bv):
            return en.tmean(en.conv2d(xt, w, bias=bv))
        return max(e1, e2, grad_check(fb, b))

    @check("conv2d strided zero padding")
    def _():
        w = Tensor(rand(5, 5, 2, 3) * 0.3, requires_grad=True)

        def f(x):
            return en.tmean(en.mul(en.conv2d(x, w, stride=2, padding="zero"), 0.5))
        return grad_check(f, Tensor(rand(1, 2, 9, 9)))

    @check("conv2d dilated reflect, multi-bounce pad")
    def _():
        w = Tensor(rand(3, 3, 2, 2) * 0.4, requires_grad=True)

        def f(x):
            y = en.conv2d(x, w, dilation=8)
            return en.tmean(en.mul(y, y))
        return grad_check(f, Tensor(rand(1, 2, 4, 4)))

    @check("conv2d valid (padding none)")
    def _():
        w = Tensor(rand(3, 3, 2, 2) * 0.4, requires_grad=True)

        def f(x):
            return en.tmean(en.conv2d(x, w, padding="none"))
        return grad_check(f, Tensor(rand(1, 2, 7, 7)))

    @check("grouped conv with channel shuffle")
    def _():
        w = Tensor(rand(3, 3, 2, 4) * 0.4, requires_grad=True)

        def f(x):
            y = en.conv2d(x, w, groups=2)
            y = en.channel_shuffle(y, 2)
            return en.tmean(en.mul(y, y))
        return grad_check(f, Tensor(rand(1, 4, 5, 5)))

    @check("upsample_nearest2x")
    def _():
        def f(x):
            y = en.upsample_nearest2x(x)
            return en.tmean(en.mul(y, y))
        return grad_check(f, Tensor(rand(2, 3, 4, 4)))

    @check("elu")
    def _():
        x0 = _away_from(rand(4, 7), (0.0,), 1e-3)
        return grad_check(lambda x: en.tmean(en.elu(x)), Tensor(x0))

    @check("leaky_relu")
    def _():
        x0 = _away_from(rand(4, 7), (0.0,), 1e-3)
        return grad_check(lambda x: en.tmean(en.leaky_relu(x)), Tensor(x0))

    @check("tanh")
    def _():
        return grad_check(lambda x: en.tmean(en.tanh(x)), Tensor(rand(4, 7)))

    @check("clip_unit (inside the interval)")
    def _():
        x0 = np.clip(rand(4, 7, scale=0.4), -0.95, 0.95)
        return grad_check(lambda x: en.tmean(en.mul(en.clip_unit(x), x)), Tensor(x0))

    @check("scaled_softmax")
    def _():
        def f(x):
            y = en.scaled_softmax(x, 3.0)
            return en.tmean(en.mul(y, y))
        return grad_check(f, Tensor(rand(9)))

    @check("l1_mean (away from ties)")
    def _():
        a0 = rand(3, 5)
        target = a0 + np.where(rand(3, 5) > 0, 0.5, -0.5)

        def f(a):
            return en.l1_mean(a, Tensor(target))
        return grad_check(f, Tensor(a0))

    @check("matmul / sum / mean / sqrt chain")
    def _():
        b = Tensor(rand(6, 4), requires_grad=True)

        def f(a):
            prod = en.matmul(a, b)
            q = en.tsum(en.mul(prod, prod), axis=1, keepdims=True)
            return en.tmean(en.sqrt(en.clamp_min(q, 1e-6)))
        return grad_check(f, Tensor(rand(5, 6)))

    @check("unfold / take_rows / softmax rows")
    def _():
        idx = np.array([0, 3, 7, 11])

        def f(x):
            patches = en.reshape(en.unfold(x, k=3), (16, 9 * 2))
            rows = en.take_rows(patches, idx)
            sm = en.softmax(rows, axis=1)
            return en.tmean(en.mul(sm, rows))
        return grad_check(f, Tensor(rand(1, 2, 4, 4)))

    @check("attention, cosine mode")
    def _():
        mask = np.zeros((6, 6), np.uint8)
        mask[2:4, 2:4] = 1

        def f(x):
            y = cam_forward(x, mask, mode="cosine", lam=3.0)
            return en.tmean(en.mul(y, y))
        return grad_check(f, Tensor(rand(1, 3, 6, 6)))

    @check("attention, euclidean mode")
    def _():
        mask = np.zeros((6, 6), np.uint8)
        mask[1:3, 3:5] = 1

        def f(x):
            y = cam_forward(x, mask, mode="euclidean", lam=3.0)
            return en.tmean(en.mul(y, y))
        return grad_check(f, Tensor(rand(1, 3, 6, 6)))

    @check("hinge losses (away from kinks)")
    def _():
        fake0 = _away_from(rand(2, 1, 2, 2), (-1.0, 1.0), 1e-2)
        real = Tensor(_away_from(rand(2, 1, 2, 2), (-1.0, 1.0), 1e-2))

        def f(fake):
            return en.add(d_hinge_loss(real, fake), g_adv_loss(fake))
        return grad_check(f, Tensor(fake0))

    @check("composite_output")
    def _():
        orig = rand(1, 3, 5, 5) * 0.5
        mask = gen_square_mask(5, 5, (1, 1, 3, 3))[None]

        def f(gen):
            comp = composite_output(en.tanh(gen), orig, mask)
            return en.l1_mean(comp, Tensor(orig + 0.3))
        return grad_check(f, Tensor(rand(1, 3, 5, 5) * 0.5))

    @check("rate-adaptive modulation + residual unit")
    def _():
        from .nets import DpuConfig, NetworkParams
        r = np.random.default_rng(7)
        cfg = DpuConfig(n=2, rates=(1, 2), groups=2, channels=4)
        net = NetworkParams("diet_pepsi", dpu=cfg)
        net.add("enc.bank.w", r.normal(0, 0.4, size=(3, 3, 2, 4)))
        for d in cfg.rates:
            net.add(f"enc.bank.rate{d}.gamma", r.normal(1.0, 0.2, size=(1, 1, 2, 4)))
            net.add(f"enc.bank.rate{d}.beta", r.normal(0.0, 0.2, size=(1, 1, 2, 4)))
        for i in range(cfg.n):
            net.add(f"enc.dpu{i}.rac.b", r.normal(0, 0.1, size=4))
            net.add(f"enc.dpu{i}.pw.w", r.normal(0, 0.4, size=(1, 1, 2, 4)))
            net.add(f"enc.dpu{i}.pw.b", r.normal(0, 0.1, size=4))

        def f(x):
            y = dpu_forward(dpu_forward(x, net, 0), net, 1)
            return en.tmean(en.mul(y, y))
        return grad_check(f, Tensor(rand(1, 4, 6, 6)))

    @check("discriminator score path (input gradient)")
    def _():
        d64 = build_red(np.random.default_rng(9), input_size=16,
                        channel_div=64, dtype=np.float64)
        states = init_spectral_states(d64, np.random.default_rng(10))

        def f(x):
            s = red_forward(x, d64, states, power_iters=3, update_u=False)
            return en.tmean(en.mul(s, s))
        return grad_check(f, Tensor(rand(1, 3, 16, 16) * 0.5))

    return checks


def e2e_checks(image_size=32, channel_div=8):
    """End-to-end generator graphs, one per attention mode, differentiated
    with respect to the composed 4-channel input."""
    checks = []
    for mode in ("cosine", "euclidean"):
        def make(mode=mode):
            rng = np.random.default_rng(11)
            net = build_generator("pepsi", rng, channel_div=channel_div,
                                  dtype=np.float64)
            image = rng.uniform(-0.9, 0.9, size=(3, image_size, image_size))
            mask = gen_square_mask(image_size, image_size,
                                   (image_size // 4, image_size // 4,
                                    image_size // 4, image_size // 4))
            x0 = compose_input(image, mask)[None]
            target = rng.uniform(-0.9, 0.9, size=(1, 3, image_size, image_size))

            def f(x):
                out = pepsi_apply(x, mask[None], net, mode="train",
                                  cam_mode=mode, lam=3.0)
                return en.add(en.l1_mean(out.inpaint, Tensor(target)),
                              en.mul(en.l1_mean(out.coarse, Tensor(target)), 0.5))

            def run():
                return grad_check(f, Tensor(x0))
            return run
        checks.append((f"end-to-end generator, {mode} attention", make()))
    return checks


def run_suite(include_e2e=True, tol=DEFAULT_TOL):
    """Run every check; returns (name, error, passed) rows."""
    checks = suite_checks()
    if include_e2e:
        checks = checks + e2e_checks()
    results = []
    for name, fn in checks:
        err = fn()
        results.append((name, err, err < tol))
    return results
