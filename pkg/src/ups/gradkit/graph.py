"""Tape-based reverse-mode differentiation over numpy arrays.

A :class:`Graph` is rebuilt for every forward pass. Nodes are appended in
creation order, so inputs always precede outputs and the reverse sweep is a
plain walk backwards over the tape.

Gradients of complex nodes follow the convention ``dL/dRe + i dL/dIm``.
"""
from __future__ import annotations

import weakref
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import erf

from . import fft as _fft

_COMPLEX_OF = {np.dtype(np.float64): np.complex128, np.dtype(np.float32): np.complex64}


class ShapeError(ValueError):
    pass


class Node:
    __slots__ = ("graph", "id", "value", "op", "inputs", "vjps", "requires_grad", "name", "__weakref__")

    def __init__(self, graph, value, op, inputs=(), vjps=(), requires_grad=False, name=None):
        self.graph = graph
        self.id = len(graph._tape)
        self.value = value
        self.op = op
        self.inputs = tuple(inputs)
        self.vjps = tuple(vjps)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Node(#{self.id} {self.op} shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """Append-only tape. ``record=False`` skips storing backward closures.

    Nodes point at their graph, so the tape only holds weak references:
    activations are freed as soon as nothing downstream of them is alive,
    without waiting for the cycle collector.
    """

    def __init__(self, dtype=np.float64, record: bool = True):
        self.dtype = np.dtype(dtype)
        self.cdtype = _COMPLEX_OF[self.dtype]
        self.record = record
        self._tape: list[weakref.ref] = []
        self.params: weakref.WeakValueDictionary[str, Node] = weakref.WeakValueDictionary()
        self._param_info: dict[str, tuple] = {}  # name -> (shape, dtype, trainable)

    def _push(self, value, op, inputs=(), vjps=(), requires_grad=None, name=None) -> Node:
        if requires_grad is None:
            requires_grad = self.record and any(i.requires_grad for i in inputs)
        if not requires_grad:
            vjps = ()
        node = Node(self, value, op, inputs, vjps, requires_grad, name)
        self._tape.append(weakref.ref(node))
        return node

    def param(self, name: str, value: np.ndarray, trainable: bool = True) -> Node:
        if name in self._param_info:
            raise KeyError(f"parameter {name!r} registered twice")
        value = np.asarray(value, dtype=self.dtype)
        node = self._push(value, "param", requires_grad=trainable and self.record, name=name)
        self.params[name] = node
        self._param_info[name] = (value.shape, value.dtype, node.requires_grad)
        return node

    def const(self, value) -> Node:
        value = np.asarray(value)
        if not np.iscomplexobj(value):
            value = value.astype(self.dtype, copy=False)
        return self._push(value, "const", requires_grad=False)

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Reverse sweep from a scalar ``loss``; returns name -> gradient for
        every trainable parameter (zeros for parameters the loss never touched)."""
        if loss.graph is not self:
            raise ValueError("loss belongs to a different graph")
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
        for ref in reversed(self._tape[: loss.id + 1]):
            node = ref()
            if node is None:  # nothing reachable from the loss needs it
                continue
            g = grads.pop(node.id, None)
            if g is None or not node.vjps:
                if node.op == "param" and g is not None:
                    grads[node.id] = g
                continue
            for inp, vjp in zip(node.inputs, node.vjps):
                if not inp.requires_grad:
                    continue
                gi = vjp(g)
                if inp.id in grads:
                    grads[inp.id] = grads[inp.id] + gi
                else:
                    grads[inp.id] = gi
        out = {}
        for name, (shape, dtype, trainable) in self._param_info.items():
            if trainable:
                node = self.params.get(name)
                g = None if node is None else grads.get(node.id)
                out[name] = np.zeros(shape, dtype) if g is None else g
        return out


def _check_axis(x: Node, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def _same_shape(op: str, a: Node, b: Node) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead else g
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a: Node, b: Node) -> Node:
    _same_shape("add", a, b)
    return a.graph._push(a.value + b.value, "add", (a, b), (lambda g: g, lambda g: g))


def sub(a: Node, b: Node) -> Node:
    _same_shape("sub", a, b)
    return a.graph._push(a.value - b.value, "sub", (a, b), (lambda g: g, lambda g: -g))


def mul(a: Node, b: Node) -> Node:
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return a.graph._push(
        av * bv, "mul", (a, b), (lambda g: g * np.conj(bv), lambda g: g * np.conj(av))
    )


def scale(x: Node, c: float) -> Node:
    c = float(c)
    return x.graph._push(x.value * c, "scale", (x,), (lambda g: g * c,))


def add_const(x: Node, c) -> Node:
    """x + c where the constant array ``c`` broadcasts to ``x.shape``."""
    c = np.asarray(c)
    val = x.value + c
    if val.shape != x.shape:
        raise ShapeError(f"add_const: {c.shape} does not broadcast to {x.shape}")
    return x.graph._push(val.astype(x.value.dtype, copy=False), "add_const", (x,), (lambda g: g,))


def mul_const(x: Node, c) -> Node:
    """x * c where the constant array ``c`` broadcasts to ``x.shape``.
    Entries where ``c == 0`` receive exactly zero gradient."""
    c = np.asarray(c)
    val = x.value * c
    if val.shape != x.shape:
        raise ShapeError(f"mul_const: {c.shape} does not broadcast to {x.shape}")
    return x.graph._push(
        val.astype(x.value.dtype, copy=False), "mul_const", (x,), (lambda g: g * np.conj(c),)
    )


def broadcast_to(x: Node, shape: Sequence[int]) -> Node:
    shape = tuple(shape)
    try:
        val = np.broadcast_to(x.value, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {x.shape} to {shape}") from exc
    src = x.shape
    return x.graph._push(val, "broadcast", (x,), (lambda g: _sum_to(g, src).reshape(src),))


def square(x: Node) -> Node:
    v = x.value
    return x.graph._push(v * v, "square", (x,), (lambda g: 2.0 * g * v,))


def sqrt(x: Node) -> Node:
    """Square root with zero (sub)gradient at exactly zero input."""
    v = np.sqrt(x.value)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(v > 0, g / (2.0 * np.where(v > 0, v, 1.0)), 0.0)
        return out.astype(v.dtype, copy=False)

    return x.graph._push(v, "sqrt", (x,), (vjp,))


def exp(x: Node) -> Node:
    v = np.exp(x.value)
    return x.graph._push(v, "exp", (x,), (lambda g: g * v,))


def gelu(x: Node) -> Node:
    """Exact (erf-based) GELU."""
    xv = x.value
    cdf = 0.5 * (1.0 + erf(xv / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * xv * xv) / np.sqrt(2.0 * np.pi)
    val = (xv * cdf).astype(xv.dtype, copy=False)
    return x.graph._push(val, "gelu", (x,), (lambda g: g * (cdf + xv * pdf),))


# ---------------------------------------------------------------- reductions


def sum(x: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001
    if axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(_check_axis(x, a) for a in axes)
    else:
        axes = tuple(range(x.ndim))
    val = x.value.sum(axis=axes, keepdims=keepdims)
    shape = x.shape

    def vjp(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, shape).copy()

    return x.graph._push(np.asarray(val), "sum", (x,), (vjp,))


def mean(x: Node, axis=None, keepdims: bool = False) -> Node:
    if axis is None:
        count = x.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[_check_axis(x, a)] for a in axes]))
    return scale(sum(x, axis, keepdims), 1.0 / count)


def softmax(x: Node, axis: int = -1) -> Node:
    axis = _check_axis(x, axis)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return s * (g - (g * s).sum(axis=axis, keepdims=True))

    return x.graph._push(s, "softmax", (x,), (vjp,))


def layernorm(x: Node, axis: int = -1, eps: float = 1e-5) -> Node:
    """Normalise to zero mean and unit variance along ``axis`` (no affine)."""
    axis = _check_axis(x, axis)
    xv = x.value
    mu = xv.mean(axis=axis, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=axis, keepdims=True)
        gy = (g * y).mean(axis=axis, keepdims=True)
        return inv * (g - gm - y * gy)

    return x.graph._push(y, "layernorm", (x,), (vjp,))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Node, b: Node) -> Node:
    """Batched matrix product. Leading (batch) axes follow numpy broadcasting,
    so a 2D weight may multiply a batch of matrices."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    av, bv = a.value, b.value
    try:
        val = np.matmul(av, bv)
    except ValueError as exc:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible") from exc
    sa, sb = a.shape, b.shape

    def vjp_a(g):
        return _sum_to(np.matmul(g, np.conj(np.swapaxes(bv, -1, -2))), sa)

    def vjp_b(g):
        if av.ndim > 2 and bv.ndim == 2:
            # fold batch axes into rows: one large GEMM instead of many small ones
            a2 = av.reshape(-1, av.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            return np.conj(a2.T) @ g2
        return _sum_to(np.matmul(np.conj(np.swapaxes(av, -1, -2)), g), sb)

    return a.graph._push(val, "matmul", (a, b), (vjp_a, vjp_b))


# ---------------------------------------------------------------- shape ops


def reshape(x: Node, shape: Sequence[int]) -> Node:
    src = x.shape
    try:
        val = x.value.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return x.graph._push(val, "reshape", (x,), (lambda g: g.reshape(src),))


def transpose(x: Node, axes: Sequence[int]) -> Node:
    axes = tuple(_check_axis(x, a) for a in axes)
    inv = tuple(np.argsort(axes))
    return x.graph._push(
        np.ascontiguousarray(np.transpose(x.value, axes)),
        "transpose",
        (x,),
        (lambda g: np.transpose(g, inv),),
    )


def concat(xs: Sequence[Node], axis: int) -> Node:
    xs = list(xs)
    axis = _check_axis(xs[0], axis)
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
            s != t for i, (s, t) in enumerate(zip(x.shape, xs[0].shape)) if i != axis
        ):
            raise ShapeError(f"concat: shapes {[x.shape for x in xs]} incompatible on axis {axis}")
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])
    val = np.concatenate([x.value for x in xs], axis=axis)

    def make(i):
        sl = [slice(None)] * val.ndim
        sl[axis] = slice(bounds[i], bounds[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return xs[0].graph._push(val, "concat", xs, [make(i) for i in range(len(xs))])


def take(x: Node, indices, axis: int) -> Node:
    """Gather ``indices`` along ``axis`` (indices may repeat)."""
    axis = _check_axis(x, axis)
    idx = np.asarray(indices, dtype=np.intp)
    shape = x.shape
    val = np.take(x.value, idx, axis=axis)

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        moved = np.moveaxis(out, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        np.add.at(moved, idx, gm)
        return out

    return x.graph._push(val, "take", (x,), (vjp,))


def put(x: Node, indices, size: int, axis: int) -> Node:
    """Scatter ``x`` into a zero array with extent ``size`` along ``axis``
    (adjoint of :func:`take` for unique indices)."""
    axis = _check_axis(x, axis)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or len(idx) != x.shape[axis]:
        raise ShapeError("put: indices must be 1D and match the axis extent")
    if len(np.unique(idx)) != len(idx):
        raise ValueError("put: indices must be unique")
    shape = list(x.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=x.value.dtype)
    sl = [slice(None)] * x.ndim
    sl[axis] = idx
    out[tuple(sl)] = x.value
    return x.graph._push(out, "put", (x,), (lambda g: np.take(g, idx, axis=axis),))


def gather_rows(x: Node, indices) -> Node:
    """Per-batch gather along axis 1: ``out[b, i] = x[b, indices[b, i]]``."""
    idx = np.asarray(indices, dtype=np.intp)
    if x.ndim < 2 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_rows: index shape {idx.shape} vs input {x.shape}")
    rows = np.arange(idx.shape[0])[:, None]
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, (rows, idx), g)
        return out

    return x.graph._push(x.value[rows, idx], "gather_rows", (x,), (vjp,))


# ---------------------------------------------------------------- complex / spectral


def to_complex(x: Node) -> Node:
    g_ = x.graph
    return g_._push(x.value.astype(g_.cdtype), "to_complex", (x,), (lambda g: np.real(g).copy(),))


def real(x: Node) -> Node:
    g_ = x.graph
    return g_._push(np.real(x.value).copy(), "real", (x,), (lambda g: g.astype(g_.cdtype),))


def as_complex(x: Node) -> Node:
    """Interpret a real array with trailing extent 2 as (re, im) pairs."""
    if x.shape[-1] != 2:
        raise ShapeError(f"as_complex needs a trailing axis of 2, got {x.shape}")
    g_ = x.graph
    val = (x.value[..., 0] + 1j * x.value[..., 1]).astype(g_.cdtype)
    return g_._push(val, "as_complex", (x,), (lambda g: np.stack([g.real, g.imag], axis=-1),))


def fft(x: Node, axis: int = -1) -> Node:
    """Unnormalised DFT along one axis (radix-2); real input is promoted."""
    axis = _check_axis(x, axis)
    if not np.iscomplexobj(x.value):
        x = to_complex(x)
    g_ = x.graph
    n = x.shape[axis]
    val = _fft.fft(x.value, axis=axis).astype(g_.cdtype, copy=False)
    return g_._push(val, "fft", (x,), (lambda g: (n * _fft.ifft(g, axis=axis)).astype(g_.cdtype),))


def ifft(x: Node, axis: int = -1) -> Node:
    axis = _check_axis(x, axis)
    g_ = x.graph
    n = x.shape[axis]
    val = _fft.ifft(x.value, axis=axis).astype(g_.cdtype, copy=False)
    return g_._push(val, "ifft", (x,), (lambda g: (_fft.fft(g, axis=axis) / n).astype(g_.cdtype),))


def fft2(x: Node) -> Node:
    """Unnormalised 2D DFT over the last two axes; real input is promoted."""
    if not np.iscomplexobj(x.value):
        x = to_complex(x)
    return fft(fft(x, -1), -2)


def ifft2(x: Node) -> Node:
    return ifft(ifft(x, -2), -1)


def channel_mix(xhat: Node, w: Node) -> Node:
    """Complex channel mixing per retained mode:
    ``out[b, o, p, q] = sum_i xhat[b, i, p, q] * w[i, o, p, q]``."""
    if xhat.ndim != 4 or w.ndim != 4 or xhat.shape[1] != w.shape[0] or xhat.shape[2:] != w.shape[2:]:
        raise ShapeError(f"channel_mix: shapes {xhat.shape} and {w.shape} are incompatible")
    b, ci, p, q = xhat.shape
    co = w.shape[1]
    xm = np.ascontiguousarray(xhat.value.transpose(2, 3, 0, 1)).reshape(p * q, b, ci)
    wm = np.ascontiguousarray(w.value.transpose(2, 3, 0, 1)).reshape(p * q, ci, co)
    om = np.matmul(xm, wm)
    val = om.reshape(p, q, b, co).transpose(2, 3, 0, 1)

    def vjp_x(g):
        gm = np.ascontiguousarray(g.transpose(2, 3, 0, 1)).reshape(p * q, b, co)
        gx = np.matmul(gm, np.conj(wm.transpose(0, 2, 1)))
        return gx.reshape(p, q, b, ci).transpose(2, 3, 0, 1)

    def vjp_w(g):
        gm = np.ascontiguousarray(g.transpose(2, 3, 0, 1)).reshape(p * q, b, co)
        gw = np.matmul(np.conj(xm.transpose(0, 2, 1)), gm)
        return gw.reshape(p, q, ci, co).transpose(2, 3, 0, 1)

    return xhat.graph._push(np.ascontiguousarray(val), "channel_mix", (xhat, w), (vjp_x, vjp_w))


def mode_indices(n: int, modes: int) -> np.ndarray:
    """Retained frequency indices along one axis: 0..modes-1 and n-modes..n-1."""
    if not 1 <= modes <= n // 2:
        raise ShapeError(f"modes must lie in [1, {n // 2}] for extent {n}, got {modes}")
    return np.concatenate([np.arange(modes), np.arange(n - modes, n)])


@lru_cache(maxsize=64)
def _partial_dft(n: int, modes: int) -> np.ndarray:
    k = mode_indices(n, modes)
    mat = np.exp(-2j * np.pi * np.outer(np.arange(n), k) / n)
    mat.setflags(write=False)
    return mat


def _contract(x: np.ndarray, mat: np.ndarray, axis: int, real_out: bool = False) -> np.ndarray:
    """``y[.., j, ..] = sum_i x[.., i, ..] mat[i, j]`` along ``axis``.

    Real operands stay in real arithmetic; ``real_out`` returns only the real
    part of the product. The last two axes avoid any transposed copies.
    """
    last = axis == x.ndim - 1
    if not last and axis != x.ndim - 2:
        return np.moveaxis(_contract(np.moveaxis(x, axis, -1), mat, x.ndim - 1, real_out), -1, axis)

    def mm(a, m):
        # fold every leading axis into one GEMM; numpy's broadcast matmul
        # would issue one small product per leading index
        if last:
            return (a.reshape(-1, a.shape[-1]) @ m).reshape(a.shape[:-1] + (m.shape[1],))
        lead, (n, k) = a.shape[:-2], a.shape[-2:]
        r = np.tensordot(m, a.reshape(-1, n, k), axes=([0], [1]))  # [j, P, k]
        return np.ascontiguousarray(r.transpose(1, 0, 2)).reshape(lead + (m.shape[1], k))

    if not np.iscomplexobj(mat):
        return mm(x, mat)
    if last:
        # interleaved (re, im) views keep every product a contiguous real GEMM
        rdt = np.empty(0, dtype=x.dtype).real.dtype
        if not np.iscomplexobj(x):
            if real_out:
                return mm(x, np.ascontiguousarray(mat.real, dtype=rdt))
            inter = np.empty((mat.shape[0], 2 * mat.shape[1]), dtype=rdt)
            inter[:, 0::2], inter[:, 1::2] = mat.real, mat.imag
            return mm(np.ascontiguousarray(x), inter).view(np.result_type(rdt, np.complex64))
        if real_out:
            stacked = np.empty((2 * mat.shape[0], mat.shape[1]), dtype=rdt)
            stacked[0::2], stacked[1::2] = mat.real, -mat.imag
            return mm(np.ascontiguousarray(x).view(rdt), stacked)
        return mm(x, mat.astype(x.dtype, copy=False))
    if not np.iscomplexobj(x):
        re = mm(x, np.ascontiguousarray(mat.real))
        return re if real_out else re + 1j * mm(x, np.ascontiguousarray(mat.imag))
    if real_out:
        return mm(x.real, np.ascontiguousarray(mat.real)) - mm(x.imag, np.ascontiguousarray(mat.imag))
    return mm(x, mat)


def dft_modes(x: Node, axis: int, modes: int) -> Node:
    """Retained-mode slice of the unnormalised DFT along ``axis``.

    Equal to ``take(fft(x, axis), mode_indices(n, modes), axis)`` but computed
    as a product with the partial DFT matrix, costing O(n * modes) per line.
    """
    axis = _check_axis(x, axis)
    g_ = x.graph
    n = x.shape[axis]
    mat = _partial_dft(n, modes)  # [n, 2m]
    adj = np.ascontiguousarray(np.conj(mat.T))
    was_real = not np.iscomplexobj(x.value)
    val = _contract(x.value, mat, axis).astype(g_.cdtype, copy=False)

    def vjp(g):
        if was_real:
            return _contract(g, adj, axis, real_out=True).astype(g_.dtype, copy=False)
        return _contract(g, adj, axis).astype(g_.cdtype, copy=False)

    return g_._push(val, "dft_modes", (x,), (vjp,))


def idft_modes(x: Node, axis: int, n: int) -> Node:
    """Inverse DFT (1/n normalised) from retained modes, other modes zero.

    Equal to ``ifft(put(x, mode_indices(n, modes), n, axis), axis)``.
    """
    axis = _check_axis(x, axis)
    g_ = x.graph
    modes = x.shape[axis] // 2
    mat = np.ascontiguousarray(np.conj(_partial_dft(n, modes).T) / n)  # [2m, n]
    adj = np.ascontiguousarray(np.conj(mat.T))
    val = _contract(x.value, mat, axis).astype(g_.cdtype, copy=False)

    def vjp(g):
        return _contract(g, adj, axis).astype(g_.cdtype, copy=False)

    return g_._push(val, "idft_modes", (x,), (vjp,))


def idft_modes_real(x: Node, axis: int, n: int) -> Node:
    """``real(idft_modes(x, axis, n))`` without forming the imaginary part."""
    axis = _check_axis(x, axis)
    g_ = x.graph
    modes = x.shape[axis] // 2
    mat = np.ascontiguousarray(np.conj(_partial_dft(n, modes).T) / n)
    adj = np.ascontiguousarray(np.conj(mat.T))
    val = _contract(x.value, mat, axis, real_out=True).astype(g_.dtype, copy=False)

    def vjp(g):
        # g is real; the cotangent of a complex input is g @ conj(mat)^T
        return _contract(g, adj, axis).astype(g_.cdtype, copy=False)

    return g_._push(val, "idft_modes_real", (x,), (vjp,))
