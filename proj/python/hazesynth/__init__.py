"""Controllable haze rendering, depth-based baseline synthesis and set metrics."""

import torch  # noqa: F401  loads the libtorch shared libraries the extension links against

from ._hazesynth import (  # noqa: F401
    ConfigError,
    DataError,
    Error,
    FormatError,
    InvalidArgument,
    NotFoundError,
    NumericError,
    Renderer,
    adversarial_loss_discriminator,
    adversarial_loss_generator,
    apply_density,
    baseline_render,
    edge_loss,
    fid,
    fid_from_samples,
    load_image,
    luminance_loss,
    psnr,
    psnr_from_mse,
    render_haze,
    run_cli,
    save_image,
    smoothness_loss,
    to_grayscale,
    transmission_from_depth,
)
