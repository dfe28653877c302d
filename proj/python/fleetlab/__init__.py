"""Python bindings for the fleetlab core operations.

The heavy lifting (validation, the filter language, the sandbox script
engine, majority voting, wire framing) lives in the C++ extension module.
"""

from ._core import (
    builtin_histogram,
    builtin_mean,
    decode_frame,
    encode_frame,
    eval_filter,
    execute_custom,
    majority_filter,
    md5_hex,
    parse_filter,
    sensor_samples,
    signature,
    validate_assignment,
    validate_custom,
)

__all__ = [
    "builtin_histogram",
    "builtin_mean",
    "decode_frame",
    "encode_frame",
    "eval_filter",
    "execute_custom",
    "majority_filter",
    "md5_hex",
    "parse_filter",
    "sensor_samples",
    "signature",
    "validate_assignment",
    "validate_custom",
]
