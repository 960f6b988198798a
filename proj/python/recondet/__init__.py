"""Multi-reconstruction synthetic face detection.

Thin re-export of the compiled core: imaging operations, the diffusion
schedule and its deterministic transport, classifier input assembly,
evaluation metrics, and loaders for trained checkpoints.
"""

from recondet._recondet import __version__
from recondet._recondet import (
    Detector,
    DiffusionSchedule,
    DmModel,
    Family,
    GanInverter,
    Image,
    InputMode,
    accuracy,
    all_input_modes,
    argmax3,
    average_precision,
    build_input,
    ddim_transport,
    denormalize_u8,
    family_label,
    family_name,
    forward_diffuse,
    gaussian_blur,
    input_channels,
    input_mode_name,
    jpeg_compress,
    jpeg_quality_for_level,
    load_denoiser,
    load_detector,
    load_gan,
    load_image,
    load_image_native,
    mann_whitney_p,
    mode_uses_dm,
    mode_uses_gan,
    mse,
    normalize_u8,
    parse_input_mode,
    psnr,
    resize,
    save_jpeg,
    save_png,
    snap_u16,
    softmax3,
    ternary_cross_entropy,
)

__all__ = [
    "Detector",
    "DiffusionSchedule",
    "DmModel",
    "Family",
    "GanInverter",
    "Image",
    "InputMode",
    "accuracy",
    "all_input_modes",
    "argmax3",
    "average_precision",
    "build_input",
    "ddim_transport",
    "denormalize_u8",
    "family_label",
    "family_name",
    "forward_diffuse",
    "gaussian_blur",
    "input_channels",
    "input_mode_name",
    "jpeg_compress",
    "jpeg_quality_for_level",
    "load_denoiser",
    "load_detector",
    "load_gan",
    "load_image",
    "load_image_native",
    "mann_whitney_p",
    "mode_uses_dm",
    "mode_uses_gan",
    "mse",
    "normalize_u8",
    "parse_input_mode",
    "psnr",
    "resize",
    "save_jpeg",
    "save_png",
    "snap_u16",
    "softmax3",
    "ternary_cross_entropy",
    "__version__",
]
