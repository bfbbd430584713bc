"""Deterministic mean-colour quantizer used as the visual vocabulary."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, FormatError


def codebook_levels(image_vocab_size: int) -> int:
    """Per-channel level count ``q`` with ``q**3 == image_vocab_size``."""
    q = round(image_vocab_size ** (1.0 / 3.0)) if image_vocab_size > 0 else 0
    for cand in (q - 1, q, q + 1):
        if cand >= 2 and cand**3 == image_vocab_size:
            return cand
    raise ConfigError(
        f"image vocabulary size {image_vocab_size} is not the cube of an integer >= 2")


def tokenize_image(patch_pixels: np.ndarray, image_vocab_size: int = 512, channels: int = 3) -> np.ndarray:
    """Map each patch to ``r*q*q + g*q + b`` from its quantized channel means.

    ``patch_pixels`` is ``(M, C*P*P)`` with each patch flattened channel-first.
    Single-channel images use the grey level for all three colour slots.
    """
    q = codebook_levels(image_vocab_size)
    patches = np.asarray(patch_pixels)
    if channels not in (1, 3):
        raise FormatError(f"image tokenizer supports 1 or 3 channels, got {channels}")
    if patches.ndim != 2 or patches.shape[1] % channels:
        raise FormatError(f"patch array shape {patches.shape} incompatible with {channels} channels")
    m = patches.shape[0]
    per_channel = patches.reshape(m, channels, -1).astype(np.int64)
    n = per_channel.shape[2]
    # level = floor(mean * q / 256), exact in integers
    levels = np.minimum(per_channel.sum(axis=2) * q // (256 * n), q - 1)
    if channels == 1:
        levels = np.repeat(levels, 3, axis=1)
    return levels[:, 0] * q * q + levels[:, 1] * q + levels[:, 2]
