"""Command-line surface: mask/dataset generation, training, inference,
evaluation, parameter audits, and the gradient-check suite.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import engine as en
from .config import load_config, save_config
from .checkpoint import load_checkpoint
from .losses import composite_output
from .masks import FreeFormParams, gen_freeform_mask, gen_square_mask
from .metrics import evaluate_pair
from .nets import build_generator, count_params, pepsi_forward
from .ppm import read_pgm, read_ppm, write_pgm, write_ppm
from .synthetic import SyntheticSpec, gen_synthetic


def _cmd_maskgen(args):
    os.makedirs(args.out_dir, exist_ok=True)
    for i in range(args.count):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=args.seed,
                                                           spawn_key=(4, i)))
        if args.mode == "square":
            mask = gen_square_mask(args.h, args.w, "random", rng)
        else:
            mask = gen_freeform_mask(FreeFormParams.for_size(args.h, args.w), rng)
        write_pgm(os.path.join(args.out_dir, f"mask_{i:05d}.pgm"), mask)
    print(f"wrote {args.count} masks to {args.out_dir}")
    return 0


def _cmd_synth(args):
    spec = SyntheticSpec(pattern=args.pattern, size=args.size,
                         count=args.count, seed=args.seed)
    names = gen_synthetic(spec, args.out_dir)
    print(f"wrote {len(names)} images to {args.out_dir}")
    return 0


def _cmd_train(args):
    from .report import save_loss_curves
    from .training import (build_dataset, init_networks, load_train_checkpoint,
                           train_loop)

    cfg = load_config(args.config)
    out_dir = args.out_dir or "train_out"
    os.makedirs(out_dir, exist_ok=True)
    save_config(os.path.join(out_dir, "config.used"), cfg)
    dataset = build_dataset(cfg)
    if args.resume:
        g_net, d_net, state = load_train_checkpoint(args.resume)
        # the config declares the experiment; the checkpoint contributes the
        # iteration counter, moments and power-iteration vectors
        state.k_max = cfg.k_max
        state.lr_g = cfg.lr_g
        state.lr_d = cfg.lr_d
        state.seed = cfg.seed
    else:
        g_net, d_net, state = init_networks(cfg)
    rows = train_loop(dataset, cfg, g_net, d_net, state, out_dir)
    csv_path = os.path.join(out_dir, "metrics.csv")
    save_loss_curves(csv_path, os.path.join(out_dir, "metrics.png"))
    if rows:
        last = rows[-1]
        print(f"finished at k={last['k']}: loss_g={last['loss_g']:.4f} "
              f"psnr_local={last['psnr_local']:.2f} dB ssim={last['ssim']:.4f}")
    return 0


def _cmd_infer(args):
    net, _state = load_checkpoint(args.checkpoint)
    if net.variant == "red":
        raise RuntimeError("checkpoint holds a discriminator, not a generator")
    image = read_ppm(args.image)
    mask = read_pgm(args.mask)
    with en.no_grad():
        out = pepsi_forward(image[None], mask[None], net, mode="infer",
                            cam_mode=args.cam_mode, lam=args.softmax_scale)
    result = composite_output(out.inpaint.data[0], image, mask)
    write_ppm(args.out, result)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args):
    from .report import save_eval_histograms

    names = sorted(n for n in os.listdir(args.results_dir) if n.endswith(".ppm"))
    if not names:
        raise RuntimeError(f"no .ppm results in {args.results_dir}")
    lines = ["file,psnr_local,psnr_global,ssim,hole_pixels,total_pixels"]
    reports = []
    for name in names:
        result = read_ppm(os.path.join(args.results_dir, name))
        ref = read_ppm(os.path.join(args.refs_dir, name))
        mask = read_pgm(os.path.join(args.masks_dir, os.path.splitext(name)[0] + ".pgm"))
        r = evaluate_pair(result, ref, mask)
        reports.append(r)
        lines.append(f"{name},{r.psnr_local:.6f},{r.psnr_global:.6f},"
                     f"{r.ssim:.6f},{r.hole_pixels},{r.total_pixels}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
        save_eval_histograms(reports, os.path.splitext(args.out)[0] + ".png")
    sys.stdout.write(text)
    return 0


def _cmd_audit_params(args):
    rng = np.random.default_rng(0)
    net = build_generator(args.variant, rng, groups=args.g)
    counts = count_params(net, include_bias=args.bias == "on")
    print(f"variant: {args.variant}  groups: {args.g}  bias: {args.bias}")
    for name, n in counts["per_layer"].items():
        print(f"  {name:32s} {n:>12d}")
    if "dilated_stack" in counts:
        print(f"dilated-stack subtotal: {counts['dilated_stack']}")
    if "dpu_stack" in counts:
        print(f"dpu-stack subtotal: {counts['dpu_stack']}")
    print(f"total: {counts['total']}")
    return 0


def _cmd_gradcheck(args):
    from .gradcheck import DEFAULT_TOL, run_suite

    results = run_suite(include_e2e=not args.skip_e2e)
    failed = 0
    for name, err, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {err:10.3e}  (tol {DEFAULT_TOL:g})  {name}")
        failed += 0 if ok else 1
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return 1 if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pepsi",
        description="Image inpainting networks on a minimal autodiff core.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("maskgen", help="generate hole masks as PGM files")
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--mode", choices=("square", "freeform"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_maskgen)

    p = sub.add_parser("synth", help="generate a synthetic PPM dataset")
    p.add_argument("--pattern", choices=("stripes", "checker", "gradient-blobs"),
                   default="stripes")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="run the training loop from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--resume", default=None,
                   help="checkpoint stem (without .g.peps/.d.peps)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="inpaint one image with a trained generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cam-mode", choices=("cosine", "euclidean"), default="euclidean")
    p.add_argument("--softmax-scale", type=float, default=10.0)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="score composited results against references")
    p.add_argument("--results-dir", required=True)
    p.add_argument("--refs-dir", required=True)
    p.add_argument("--masks-dir", required=True)
    p.add_argument("--out", default=None, help="also write CSV (and a .png summary)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("audit-params", help="print exact parameter counts")
    p.add_argument("--variant", choices=("pepsi", "diet_pepsi"), required=True)
    p.add_argument("--g", type=int, default=1, choices=(1, 2, 4))
    p.add_argument("--bias", choices=("on", "off"), default="off")
    p.set_defaults(func=_cmd_audit_params)

    p = sub.add_parser("gradcheck", help="run the gradient-check suite")
    p.add_argument("--skip-e2e", action="store_true",
                   help="primitives only (the full suite takes ~2 minutes)")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # runtime failure -> exit 1 with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
