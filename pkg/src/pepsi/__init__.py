"""PEPSI / Diet-PEPSI image inpainting on a minimal autodiff tensor core.

The package splits into a small dependency stack:

    engine      dense tensors, reverse-mode autodiff, conv/activation ops
    optim       Adam and spectral normalization
    masks       square and free-form hole generation, input composition
    attention   contextual attention (cosine and truncated-distance modes)
    nets        encoder/decoder graphs, Diet units, region ensemble
                discriminator, parameter accounting
    losses      hinge adversarial and L1 objectives with the coarse schedule
    training    TTUR train loop, evaluation, checkpoint resume
    metrics     local/global PSNR and SSIM
    ppm, checkpoint, config, synthetic, report, cli    I/O and tooling
"""

from .engine import Parameter, Tensor, no_grad
from .nets import NetOutput, build_generator, build_red, count_params, pepsi_forward

__version__ = "0.1.0"

__all__ = [
    "Parameter",
    "Tensor",
    "no_grad",
    "NetOutput",
    "build_generator",
    "build_red",
    "count_params",
    "pepsi_forward",
    "__version__",
]
