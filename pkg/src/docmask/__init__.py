"""Masked pre-training of a text-and-image document encoder.

Submodules: ``geometry`` (boxes and the patch grid), ``docmodel`` (records,
encoding, corpus I/O, synthetic generator), ``masking``, ``model``,
``objectives``, ``heads``, ``metrics`` and ``harness``.
"""

from .config import ModelConfig, preset
from .errors import ConfigError, DataError, DocmaskError, NumericError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "DocmaskError", "ModelConfig", "NumericError", "preset"]
