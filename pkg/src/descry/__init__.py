"""Dense per-pixel visual descriptors learned from augmented RGB views."""

from .core import Image, Rng, bilinear_sample, hsv_to_rgb, load_image, rgb_to_hsv, save_image

__all__ = [
    "Image",
    "Rng",
    "bilinear_sample",
    "hsv_to_rgb",
    "load_image",
    "rgb_to_hsv",
    "save_image",
]

__version__ = "0.1.0"
