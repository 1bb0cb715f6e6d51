"""Reversible-flow image style transfer.

A fully invertible convolutional network serves as both encoder and
decoder, so images round-trip exactly; style is moved between images by
swapping feature statistics (per-channel mean/std, or full channel
covariance) in the latent space. Because the statistic swaps preserve
the content factor exactly, repeated stylization does not corrupt the
image and a stylization can even be undone losslessly.

Typical use:

    from flowstyle import (
        ADAIN, FlowNetConfig, build_flownet, initialize_actnorms, stylize,
    )

    config = FlowNetConfig(n_blocks=2, n_flows=8, hidden=64,
                           in_channels=3, in_height=256, in_width=256)
    model = build_flownet(config, seed=0)
    initialize_actnorms(model, sample_batch)
    out = stylize(model, ADAIN, content, style)
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import FlowStyleError
from .experiments import (
    LeakReport,
    ablation_run,
    content_factor_image,
    leak_test,
    reverse_transfer,
    stylize,
)
from .flows import (
    FlowNet,
    FlowNetConfig,
    build_flownet,
    initialize_actnorms,
    named_config,
)
from .metrics import MetricReport, evaluate_stylization, gram_loss, recon_error, ssim
from .ppm import read_image, write_image
from .training import AdamState, LossNet, TrainConfig, build_lossnet, train, train_step
from .transfer import (
    ADAIN,
    PATCHSWAP,
    WCT,
    TransferKind,
    adain,
    channel_stats,
    cov_factor,
    patch_swap,
    transfer_apply,
    wct,
)

__version__ = "0.1.0"

__all__ = [
    "ADAIN",
    "AdamState",
    "FlowNet",
    "FlowNetConfig",
    "FlowStyleError",
    "LeakReport",
    "LossNet",
    "MetricReport",
    "PATCHSWAP",
    "TrainConfig",
    "TransferKind",
    "WCT",
    "ablation_run",
    "adain",
    "build_flownet",
    "build_lossnet",
    "channel_stats",
    "content_factor_image",
    "cov_factor",
    "evaluate_stylization",
    "gram_loss",
    "initialize_actnorms",
    "leak_test",
    "load_checkpoint",
    "named_config",
    "patch_swap",
    "read_image",
    "recon_error",
    "reverse_transfer",
    "save_checkpoint",
    "ssim",
    "stylize",
    "train",
    "train_step",
    "transfer_apply",
    "wct",
    "write_image",
]
