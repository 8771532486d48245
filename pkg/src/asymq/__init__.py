"""Weight-only low-bit quantization with asymmetric floating-point formats."""

from .formats import Codebook, FormatId, code_value, codebook_for, nearest_code, nearest_codes
from .quant import (
    GroupQuantParams,
    GroupSpec,
    QuantizedGroup,
    QuantizedTensor,
    QuantMode,
    dequantize_tensor,
    quantize_group_fp_asym,
    quantize_group_fp_sym,
    quantize_group_fp_zeropoint,
    quantize_group_int_asym,
    quantize_tensor,
)
from .storage import load_float, load_quantized, pack, save_float, save_quantized, unpack

__version__ = "0.1.0"
