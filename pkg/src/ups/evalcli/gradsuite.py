"""Finite-difference sweep over every differentiable primitive and the toy model."""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass

import numpy as np

from .. import gradkit as gk
from ..gradkit.check import gradcheck
from ..trainer import median_bandwidth, mmd_loss, nrmse_loss
from ..upsnet import ModelConfig, UPSModel

TOY = ModelConfig(l=4, modes=3, fno_depth=2, e=32, body_depth=2, heads=2, n=16, max_meta_len=24)

# name -> (parameter shapes, builder returning a node of any shape)
PRIMITIVES = {
    "add": ({"a": (3, 4), "b": (3, 4)}, lambda p: gk.add(p["a"], p["b"])),
    "sub": ({"a": (3, 4), "b": (3, 4)}, lambda p: gk.sub(p["a"], p["b"])),
    "mul": ({"a": (3, 4), "b": (3, 4)}, lambda p: gk.mul(p["a"], p["b"])),
    "scale": ({"a": (3, 4)}, lambda p: gk.scale(p["a"], -1.3)),
    "add_const": ({"a": (3, 4)}, lambda p: gk.add_const(p["a"], np.arange(4.0))),
    "mul_const": ({"a": (3, 4)}, lambda p: gk.mul_const(p["a"], np.arange(12.0).reshape(3, 4))),
    "broadcast_to": ({"a": (1, 4)}, lambda p: gk.broadcast_to(p["a"], (3, 4))),
    "square": ({"a": (3, 4)}, lambda p: gk.square(p["a"])),
    "sqrt": ({"a": (3, 4)}, lambda p: gk.sqrt(gk.add_const(gk.square(p["a"]), 0.5))),
    "exp": ({"a": (3, 4)}, lambda p: gk.exp(p["a"])),
    "gelu": ({"a": (3, 4)}, lambda p: gk.gelu(p["a"])),
    "sum": ({"a": (3, 4)}, lambda p: gk.sum(p["a"], axis=0, keepdims=True)),
    "mean": ({"a": (3, 4, 2)}, lambda p: gk.mean(p["a"], axis=1)),
    "softmax": ({"a": (3, 5)}, lambda p: gk.softmax(p["a"], axis=1)),
    "layernorm": ({"a": (3, 6)}, lambda p: gk.layernorm(p["a"], axis=-1)),
    "matmul": ({"a": (2, 3, 4), "b": (4, 5)}, lambda p: gk.matmul(p["a"], p["b"])),
    "reshape": ({"a": (3, 4)}, lambda p: gk.reshape(p["a"], (2, 6))),
    "transpose": ({"a": (2, 3, 4)}, lambda p: gk.transpose(p["a"], (2, 0, 1))),
    "concat": ({"a": (2, 3), "b": (2, 2)}, lambda p: gk.concat([p["a"], p["b"]], axis=1)),
    "take": ({"a": (5, 3)}, lambda p: gk.take(p["a"], [0, 2, 2, 4], axis=0)),
    "put": ({"a": (2, 3)}, lambda p: gk.put(p["a"], [0, 3, 4], 6, axis=1)),
    "gather_rows": ({"a": (2, 4, 3)}, lambda p: gk.gather_rows(p["a"], [[0, 3, 1], [2, 2, 0]])),
    "to_complex": ({"a": (3, 4)}, lambda p: gk.to_complex(p["a"])),
    "as_complex": ({"a": (3, 2)}, lambda p: gk.as_complex(p["a"])),
    "real": ({"a": (4, 2)}, lambda p: gk.real(gk.as_complex(p["a"]))),
    "complex_mul": ({"a": (3, 2), "b": (3, 2)}, lambda p: gk.mul(gk.as_complex(p["a"]), gk.as_complex(p["b"]))),
    "fft": ({"a": (3, 8)}, lambda p: gk.fft(p["a"])),
    "ifft": ({"a": (8, 2)}, lambda p: gk.ifft(gk.as_complex(p["a"]))),
    "fft2": ({"a": (2, 8, 8)}, lambda p: gk.fft2(p["a"])),
    "ifft2": ({"a": (8, 8, 2)}, lambda p: gk.ifft2(gk.as_complex(p["a"]))),
    "dft_modes": ({"a": (2, 8)}, lambda p: gk.dft_modes(p["a"], -1, 3)),
    "dft_modes_rows": ({"a": (2, 8, 3)}, lambda p: gk.dft_modes(p["a"], -2, 2)),
    "idft_modes": ({"a": (6, 3, 2)}, lambda p: gk.idft_modes(gk.as_complex(p["a"]), 0, 8)),
    "idft_modes_real": ({"a": (3, 6, 2)}, lambda p: gk.idft_modes_real(gk.as_complex(p["a"]), -1, 8)),
    "channel_mix": (
        {"x": (2, 3, 4, 4, 2), "w": (3, 5, 4, 4, 2)},
        lambda p: gk.channel_mix(gk.as_complex(p["x"]), gk.as_complex(p["w"])),
    ),
}


@dataclass
class SuiteResult:
    name: str
    worst: float
    seconds: float


def _scalarize(out, seed: int = 99):
    """Contract a node against fixed random weights to get a scalar."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(out.shape)
    if np.iscomplexobj(out.value):
        w = w + 1j * rng.standard_normal(out.shape)
        return gk.sum(gk.real(gk.mul_const(out, w)))
    return gk.sum(gk.mul_const(out, w))


def check_primitive(name: str) -> float:
    shapes, fn = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    params = {k: rng.standard_normal(s) for k, s in shapes.items()}
    return max(r.rel_error for r in gradcheck(lambda g, p: _scalarize(fn(p)), params))


def check_toy_model(seed: int = 1) -> float:
    """Full forward pass plus the training objective (nRMSE + MMD)."""
    model = UPSModel(TOY, seed=seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((3, TOY.in_channels, TOY.n, TOY.n))
    target = rng.standard_normal((3, TOY.N, TOY.n, TOY.n))
    valid = np.ones_like(target)
    valid[1, 2:] = 0
    valid[2, :, 1:] = 0
    meta = ["burgers nu=0.001", "advection beta=0.4", "x"]
    ref = rng.standard_normal((5, TOY.e))
    # training treats the median bandwidth as a constant; finite differences
    # would see it move, so it is frozen at its value for the initial params
    pooled = model.forward(gk.Graph(record=False), x, meta).pooled_mix.value
    sigma = median_bandwidth(pooled, ref)

    def build(g, P):
        f = model.forward(g, x, meta, P)
        return gk.add(nrmse_loss(f.pred, target, valid, ["a", "b", "a"]), mmd_loss(f.pooled_mix, ref, sigma))

    return max(r.rel_error for r in gradcheck(build, model.params, entries_per_param=2))


def gradient_suite(include_model: bool = True) -> list[SuiteResult]:
    out = []
    for name in sorted(PRIMITIVES):
        t = time.perf_counter()
        out.append(SuiteResult(name, check_primitive(name), time.perf_counter() - t))
    if include_model:
        t = time.perf_counter()
        out.append(SuiteResult("toy_model", check_toy_model(), time.perf_counter() - t))
    return out
