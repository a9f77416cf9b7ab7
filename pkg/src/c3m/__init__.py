"""Learned image codec with corner-to-center parallel context modelling."""

from .codec import (CodecContainer, CodecReport, FormatError, InputError, bpp, decode_image,
                    decode_latents, encode_image, encode_latents, psnr)
from .context import CausalMask, masked_conv_context, masked_transformer_context
from .entropy import (DecodeError, build_symbol_model, decode_symbols, encode_symbols,
                      estimate_rate, likelihood, quantize)
from .lcam import lcam_forward, partition_windows
from .schedule import Schedule, make_schedule, schedule_stats
from .transforms import PROFILES, ModelWeights, analysis, synthesis

__all__ = [
    "CausalMask", "CodecContainer", "CodecReport", "DecodeError", "FormatError", "InputError",
    "ModelWeights", "PROFILES", "Schedule", "analysis", "bpp", "build_symbol_model",
    "decode_image", "decode_latents", "decode_symbols", "encode_image", "encode_latents",
    "encode_symbols", "estimate_rate", "lcam_forward", "likelihood", "make_schedule",
    "masked_conv_context", "masked_transformer_context", "partition_windows", "psnr",
    "quantize", "schedule_stats", "synthesis",
]
__version__ = "0.1.0"
