"""Codebook-quantized weight matrices with lookup-table GEMM execution.

The package quantizes weight matrices into additive codebooks (greedy
residual k-means with per-group max-abs scales), executes matrix multiplies
either by dequantization or by precomputed partial-sum lookup, and accounts
for every stored bit and every multiply-accumulate with exact integer and
rational arithmetic.
"""

from .accounting import (
    BitBreakdown,
    ComplexityPrediction,
    aqlm_codebook_bytes,
    bit_breakdown,
    enumerate_configs,
    predict_complexity,
    predicted_build_fraction,
)
from .engines import (
    OpCounters,
    Psumbook,
    TileConfig,
    build_psumbook,
    codegemm_gemm,
    dense_gemm,
    dequant_gemm,
    phase_split,
)
from .errors import (
    BadMagicError,
    CodeGemmError,
    ConfigError,
    DimOverflowError,
    FormatError,
    IntegrityError,
    ShapeError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .quantizer import (
    Codebook,
    CodePlane,
    KMeansResult,
    QuantConfig,
    QuantizedLayer,
    ScalePlane,
    compute_scales,
    kmeans_fit,
    pack_codes,
    partition_vectors,
    quant_error,
    quantize_layer,
    random_layer,
    reconstruct,
    unpack_codes,
)
from .storage import deserialize, payload_bits, serialize
from .tensors import (
    Matrix,
    decode_f16_array,
    encode_f16_array,
    f16_decode,
    f16_encode,
    load_tensor,
    save_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "BadMagicError",
    "BitBreakdown",
    "CodeGemmError",
    "Codebook",
    "CodePlane",
    "ComplexityPrediction",
    "ConfigError",
    "DimOverflowError",
    "FormatError",
    "IntegrityError",
    "KMeansResult",
    "Matrix",
    "OpCounters",
    "Psumbook",
    "QuantConfig",
    "QuantizedLayer",
    "ScalePlane",
    "ShapeError",
    "TileConfig",
    "TruncatedFileError",
    "UnsupportedVersionError",
    "aqlm_codebook_bytes",
    "bit_breakdown",
    "build_psumbook",
    "codegemm_gemm",
    "compute_scales",
    "decode_f16_array",
    "dense_gemm",
    "dequant_gemm",
    "deserialize",
    "encode_f16_array",
    "enumerate_configs",
    "f16_decode",
    "f16_encode",
    "kmeans_fit",
    "load_tensor",
    "pack_codes",
    "partition_vectors",
    "payload_bits",
    "phase_split",
    "predict_complexity",
    "predicted_build_fraction",
    "quant_error",
    "quantize_layer",
    "random_layer",
    "reconstruct",
    "save_tensor",
    "serialize",
]
