"""Dense numpy tensors with tape-based reverse-mode differentiation.

Only the operation set needed by the UPS network is provided.
"""
from . import fft as fftlib
from .check import GradCheckResult, gradcheck
from .graph import (
    Graph,
    Node,
    ShapeError,
    add,
    add_const,
    as_complex,
    broadcast_to,
    channel_mix,
    concat,
    dft_modes,
    exp,
    fft,
    fft2,
    gather_rows,
    gelu,
    idft_modes,
    idft_modes_real,
    ifft,
    ifft2,
    layernorm,
    matmul,
    mean,
    mode_indices,
    mul,
    mul_const,
    put,
    real,
    reshape,
    scale,
    softmax,
    sqrt,
    square,
    sub,
    sum,
    take,
    to_complex,
    transpose,
)
from .serialize import WeightFileError, load_weights, save_weights

__all__ = [
    "Graph", "Node", "ShapeError", "GradCheckResult", "WeightFileError",
    "add", "add_const", "as_complex", "broadcast_to", "channel_mix", "concat", "exp",
    "dft_modes", "fft", "fft2", "fftlib", "gather_rows", "gelu", "gradcheck", "idft_modes", "idft_modes_real",
    "ifft", "ifft2", "layernorm", "load_weights", "matmul", "mean", "mode_indices", "mul",
    "mul_const", "put", "real",
    "reshape", "save_weights", "scale", "softmax", "sqrt", "square", "sub", "sum",
    "take", "to_complex", "transpose",
]
