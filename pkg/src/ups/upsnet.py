"""The UPS model: FNO embedder, metadata embedder, transformer body and a
linear predictor over the pooled sequence.

Parameters live in a flat ``name -> ndarray`` dict. Every forward pass
registers them on a fresh :class:`~ups.gradkit.Graph`, so freezing a group is
just a matter of registering it as non-trainable.

Parameter count for a config (c0 = N + d input channels, M = 2 * modes)::

    fno        sum_i [2 * c_in_i * l * M^2 + c_in_i * l + l],  c_in_0 = c0, else l
    proj       n^2 * e + e
    meta       vocab_size * e
    mix norm   2 * e
    body       body_depth * (12 e^2 + 13 e) + 2 e
    predictor  e * N * n^2 + N * n^2
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass

import numpy as np

from .gradkit import Graph
from .gradkit import graph as G
from .gradkit.serialize import load_weights, save_weights

log = logging.getLogger(__name__)

PAD = 256
LN_EPS = 1e-8
VOCAB_SIZE = 257  # bytes + PAD


@dataclass(frozen=True)
class ModelConfig:
    l: int = 32
    modes: int = 12
    fno_depth: int = 3
    e: int = 128
    body_depth: int = 4
    heads: int = 4
    n: int = 64
    N: int = 4
    d: int = 2
    vocab_size: int = VOCAB_SIZE
    max_meta_len: int = 80
    use_meta: bool = True
    use_coords: bool = True

    def __post_init__(self):
        if not 1 <= self.modes <= self.n // 2:
            raise ValueError(f"modes must lie in [1, n/2] = [1, {self.n // 2}], got {self.modes}")
        if self.e % self.heads:
            raise ValueError(f"e={self.e} is not divisible by heads={self.heads}")
        if self.l < 1 or self.fno_depth < 1 or self.body_depth < 0:
            raise ValueError("l and fno_depth must be >= 1, body_depth >= 0")
        if self.vocab_size < VOCAB_SIZE:
            raise ValueError(f"vocab_size must be at least {VOCAB_SIZE}")

    @property
    def in_channels(self) -> int:
        return self.N + (self.d if self.use_coords else 0)

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_count(cfg: ModelConfig) -> int:
    """Closed form, see the module docstring."""
    M2 = (2 * cfg.modes) ** 2
    fno = 0
    c_in = cfg.in_channels
    for _ in range(cfg.fno_depth):
        fno += 2 * c_in * cfg.l * M2 + c_in * cfg.l + cfg.l
        c_in = cfg.l
    n2, e = cfg.n**2, cfg.e
    return (
        fno
        + n2 * e + e
        + cfg.vocab_size * e
        + 2 * e
        + cfg.body_depth * (12 * e * e + 13 * e) + 2 * e
        + e * cfg.N * n2 + cfg.N * n2
    )


# ---------------------------------------------------------------- tokenizer


_WARNED: set[tuple[str, int]] = set()


def tokenize_meta(s: str, max_len: int) -> list[int]:
    """UTF-8 bytes as token ids; overlong strings are truncated with a warning
    (once per distinct string and limit)."""
    ids = list(s.encode("utf-8"))
    if len(ids) > max_len:
        if (s, max_len) not in _WARNED:
            _WARNED.add((s, max_len))
            log.warning("metadata %r truncated from %d to %d tokens", s, len(ids), max_len)
        ids = ids[:max_len]
    return ids


def detokenize(ids) -> str:
    return bytes(int(i) for i in ids if int(i) < 256).decode("utf-8", errors="replace")


def sinusoidal_encoding(length: int, e: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(0, e, 2)[None, :]
    angle = pos / np.power(10000.0, i / e)
    pe = np.zeros((length, e))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : e // 2])
    return pe


# ---------------------------------------------------------------- initialisation


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def init_fno_params(cfg: ModelConfig, rng, prefix: str = "fno") -> dict[str, np.ndarray]:
    p = {}
    M = 2 * cfg.modes
    c_in = cfg.in_channels
    for i in range(cfg.fno_depth):
        scale = 1.0 / (c_in * cfg.l)
        p[f"{prefix}.{i}.spectral"] = scale * rng.uniform(0.0, 1.0, size=(c_in, cfg.l, M, M, 2))
        p[f"{prefix}.{i}.pointwise.w"] = _uniform(rng, (cfg.l, c_in), 1.0 / np.sqrt(c_in))
        p[f"{prefix}.{i}.pointwise.b"] = _uniform(rng, (cfg.l,), 1.0 / np.sqrt(c_in))
        c_in = cfg.l
    return p


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    e, n2 = cfg.e, cfg.n**2
    p = init_fno_params(cfg, rng)
    p["proj.w"] = _uniform(rng, (n2, e), 1.0 / np.sqrt(n2))
    p["proj.b"] = _uniform(rng, (e,), 1.0 / np.sqrt(n2))
    p["meta.embedding"] = rng.standard_normal((cfg.vocab_size, e))
    p["mix.norm.gain"] = np.ones(e)
    p["mix.norm.bias"] = np.zeros(e)
    for j in range(cfg.body_depth):
        pre = f"body.{j}"
        for name in ("ln1", "ln2"):
            p[f"{pre}.{name}.gain"] = np.ones(e)
            p[f"{pre}.{name}.bias"] = np.zeros(e)
        for name in ("wq", "wk", "wv", "wo"):
            p[f"{pre}.attn.{name}"] = _uniform(rng, (e, e), 1.0 / np.sqrt(e))
            p[f"{pre}.attn.b{name[1]}"] = np.zeros(e)
        p[f"{pre}.mlp.w1"] = _uniform(rng, (e, 4 * e), 1.0 / np.sqrt(e))
        p[f"{pre}.mlp.b1"] = np.zeros(4 * e)
        p[f"{pre}.mlp.w2"] = _uniform(rng, (4 * e, e), 1.0 / np.sqrt(4 * e))
        p[f"{pre}.mlp.b2"] = np.zeros(e)
    p["body.final.gain"] = np.ones(e)
    p["body.final.bias"] = np.zeros(e)
    p["predictor.w"] = _uniform(rng, (e, cfg.N * n2), 1.0 / np.sqrt(e))
    p["predictor.b"] = np.zeros(cfg.N * n2)
    return p


def param_group(name: str) -> str:
    """Coarse group of a parameter: fno, proj, meta, mix, body or predictor."""
    return name.split(".", 1)[0]


# ---------------------------------------------------------------- layers


def spectral_conv2d(x: G.Node, w: G.Node, modes: int) -> G.Node:
    """Real part of ifft2(W * truncate(fft2(x))) over the four corner blocks.

    ``x`` is ``[B, c_in, n, n]``; ``w`` is ``[c_in, c_out, 2m, 2m, 2]`` with the
    trailing axis holding (re, im).
    """
    n = x.shape[-1]
    if x.ndim != 4 or x.shape[-2] != n:
        raise G.ShapeError(f"spectral_conv2d expects [B, c, n, n], got {x.shape}")
    if w.shape[0] != x.shape[1] or w.shape[2:] != (2 * modes, 2 * modes, 2):
        raise G.ShapeError(f"spectral weights {w.shape} do not fit input {x.shape} with modes={modes}")
    xh = G.dft_modes(G.dft_modes(x, -1, modes), -2, modes)
    yh = G.channel_mix(xh, G.as_complex(w))
    return G.idft_modes_real(G.idft_modes(yh, -2, n), -1, n)


def pointwise(x: G.Node, w: G.Node, b: G.Node) -> G.Node:
    """1x1 convolution: ``[B, c_in, n, n] -> [B, c_out, n, n]``, w is [c_out, c_in]."""
    B, c, n, _ = x.shape
    y = G.matmul(w, G.reshape(x, (B, c, n * n)))
    y = G.add(y, G.broadcast_to(G.reshape(b, (w.shape[0], 1)), y.shape))
    return G.reshape(y, (B, w.shape[0], n, n))


def fno_block(x: G.Node, P: dict, prefix: str, modes: int) -> G.Node:
    s = spectral_conv2d(x, P[f"{prefix}.spectral"], modes)
    return G.gelu(G.add(s, pointwise(x, P[f"{prefix}.pointwise.w"], P[f"{prefix}.pointwise.b"])))


def fno_stack(x: G.Node, P: dict, cfg: ModelConfig, prefix: str = "fno") -> G.Node:
    for i in range(cfg.fno_depth):
        x = fno_block(x, P, f"{prefix}.{i}", cfg.modes)
    return x


def affine_layernorm(x: G.Node, gain: G.Node, bias: G.Node) -> G.Node:
    y = G.layernorm(x, -1, eps=LN_EPS)
    return G.add(G.mul(y, G.broadcast_to(gain, y.shape)), G.broadcast_to(bias, y.shape))


def linear(x: G.Node, w: G.Node, b: G.Node) -> G.Node:
    y = G.matmul(x, w)
    return G.add(y, G.broadcast_to(b, y.shape))


def attention(h: G.Node, P: dict, prefix: str, heads: int, key_bias: np.ndarray | None, probe=None) -> G.Node:
    """Bidirectional multi-head self-attention; ``key_bias`` [B, S] is 0 for
    real tokens and a large negative number for padding."""
    B, S, e = h.shape
    dh = e // heads

    def split(t):
        return G.transpose(G.reshape(t, (B, S, heads, dh)), (0, 2, 1, 3))

    q = split(linear(h, P[f"{prefix}.wq"], P[f"{prefix}.bq"]))
    k = split(linear(h, P[f"{prefix}.wk"], P[f"{prefix}.bk"]))
    v = split(linear(h, P[f"{prefix}.wv"], P[f"{prefix}.bv"]))
    scores = G.scale(G.matmul(q, G.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    if key_bias is not None:
        scores = G.add_const(scores, key_bias[:, None, None, :])
    att = G.softmax(scores, -1)
    if probe is not None:
        probe.append(att.value)
    ctx = G.reshape(G.transpose(G.matmul(att, v), (0, 2, 1, 3)), (B, S, e))
    return linear(ctx, P[f"{prefix}.wo"], P[f"{prefix}.bo"])


def body_forward(h: G.Node, P: dict, cfg: ModelConfig, key_bias=None, probe: list | None = None) -> G.Node:
    """Pre-layernorm transformer encoder, no causal mask. Attention
    probabilities are appended to ``probe`` when it is given."""
    for j in range(cfg.body_depth):
        pre = f"body.{j}"
        a = affine_layernorm(h, P[f"{pre}.ln1.gain"], P[f"{pre}.ln1.bias"])
        h = G.add(h, attention(a, P, f"{pre}.attn", cfg.heads, key_bias, probe))
        m = affine_layernorm(h, P[f"{pre}.ln2.gain"], P[f"{pre}.ln2.bias"])
        m = linear(G.gelu(linear(m, P[f"{pre}.mlp.w1"], P[f"{pre}.mlp.b1"])), P[f"{pre}.mlp.w2"], P[f"{pre}.mlp.b2"])
        h = G.add(h, m)
    return affine_layernorm(h, P["body.final.gain"], P["body.final.bias"])


# ---------------------------------------------------------------- model


@dataclass
class Forward:
    pred: G.Node  # [B, N, n, n]
    h_mix: G.Node  # [B, S, e] after positional encoding and norm
    pooled_mix: G.Node  # [B, e] mean of h_mix over valid positions
    valid: np.ndarray  # [B, S] 1 for real tokens


class UPSModel:
    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = init_params(cfg, seed) if params is None else {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        expected = param_shapes(cfg)
        got = {k: v.shape for k, v in self.params.items()}
        if expected != got:
            bad = sorted(set(expected) ^ set(got)) + sorted(k for k in expected.keys() & got.keys() if expected[k] != got[k])
            raise ValueError(f"parameters do not match the config: {bad[:10]}")

    # -- graph construction

    def register(self, g: Graph, trainable=lambda name: True) -> dict[str, G.Node]:
        return {k: g.param(k, v, trainable=trainable(k)) for k, v in self.params.items()}

    def meta_ids(self, metadata: list[str]) -> tuple[np.ndarray, np.ndarray]:
        """Padded ids [B, M] and lengths [B]."""
        toks = [tokenize_meta(s, self.cfg.max_meta_len) for s in metadata]
        M = max(1, max(len(t) for t in toks))
        ids = np.full((len(toks), M), PAD, dtype=np.int64)
        for b, t in enumerate(toks):
            ids[b, : len(t)] = t
        return ids, np.array([len(t) for t in toks])

    def embed_pde(self, x: G.Node, P: dict) -> G.Node:
        cfg = self.cfg
        B = x.shape[0]
        h = fno_stack(x, P, cfg)
        h = G.reshape(h, (B, cfg.l, cfg.n * cfg.n))
        return linear(h, P["proj.w"], P["proj.b"])  # [B, l, e]

    def assemble(self, h_pde: G.Node, P: dict, metadata: list[str] | None):
        """Returns (h_mix [B, S, e], valid [B, S]). Real tokens come first in
        every row and padding last, so positions do not depend on the batch."""
        cfg = self.cfg
        B, l, e = h_pde.shape
        if cfg.use_meta and metadata is not None:
            ids, lens = self.meta_ids(metadata)
            M = ids.shape[1]
            h_meta = G.take(P["meta.embedding"], ids, axis=0)  # [B, M, e]
            h = G.concat([h_meta, h_pde], axis=1)
            order = np.empty((B, M + l), dtype=np.int64)
            valid = np.zeros((B, M + l))
            for b in range(B):
                m = lens[b]
                order[b] = np.concatenate([np.arange(m), M + np.arange(l), np.arange(m, M)])
                valid[b, : m + l] = 1.0
            h = G.gather_rows(h, order)
        else:
            h = h_pde
            valid = np.ones((B, l))
        S = h.shape[1]
        h = G.add_const(h, sinusoidal_encoding(S, e)[None])
        h = affine_layernorm(h, P["mix.norm.gain"], P["mix.norm.bias"])
        return h, valid

    def forward(self, g: Graph, x, metadata: list[str] | None, P: dict | None = None) -> Forward:
        cfg = self.cfg
        if P is None:
            P = self.register(g)
        x = x if isinstance(x, G.Node) else g.const(x)
        if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.n, cfg.n):
            raise G.ShapeError(f"model expects input [B, {cfg.in_channels}, {cfg.n}, {cfg.n}], got {x.shape}")
        B = x.shape[0]
        h_pde = self.embed_pde(x, P)
        h_mix, valid = self.assemble(h_pde, P, metadata)
        weights = valid / valid.sum(axis=1, keepdims=True)
        pooled_mix = G.reshape(G.matmul(g.const(weights[:, None, :]), h_mix), (B, cfg.e))
        key_bias = np.where(valid > 0, 0.0, -1e9) if not np.all(valid) else None
        h = body_forward(h_mix, P, cfg, key_bias)
        pooled = G.reshape(G.matmul(g.const(weights[:, None, :]), h), (B, cfg.e))
        out = linear(pooled, P["predictor.w"], P["predictor.b"])
        pred = G.reshape(out, (B, cfg.N, cfg.n, cfg.n))
        return Forward(pred, h_mix, pooled_mix, valid)

    def predict(self, x: np.ndarray, metadata: list[str] | None, batch_size: int = 64) -> np.ndarray:
        """Inference without recording a tape; returns [B, N, n, n]."""
        outs = []
        for s in range(0, x.shape[0], batch_size):
            g = Graph(record=False)
            meta = None if metadata is None else metadata[s : s + batch_size]
            outs.append(self.forward(g, x[s : s + batch_size], meta).pred.value)
        return np.concatenate(outs) if outs else np.zeros((0, self.cfg.N, self.cfg.n, self.cfg.n))

    # -- persistence

    def copy(self) -> "UPSModel":
        return UPSModel(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def save(self, path: str | os.PathLike, extra: dict | None = None) -> None:
        save_weights(path, self.params)
        with open(f"{os.fspath(path)}.json", "w") as f:
            json.dump({"config": self.cfg.to_dict(), **(extra or {})}, f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "UPSModel":
        with open(f"{os.fspath(path)}.json") as f:
            side = json.load(f)
        return cls(ModelConfig(**side["config"]), load_weights(path))

    def load_body_weights(self, path: str | os.PathLike) -> None:
        """Replace body.* parameters from a weight file; nothing else changes.
        On any shape mismatch the model is left untouched."""
        weights = load_weights(path)
        body = {k: v for k, v in weights.items() if param_group(k) == "body"}
        mine = {k for k in self.params if param_group(k) == "body"}
        problems = []
        for k in sorted(mine | set(body)):
            if k not in body:
                problems.append(f"{k}: missing from file")
            elif k not in mine:
                problems.append(f"{k}: not in model")
            elif body[k].shape != self.params[k].shape:
                problems.append(f"{k}: file {body[k].shape} vs model {self.params[k].shape}")
        if problems:
            raise ValueError("body weights do not fit this model: " + "; ".join(problems))
        for k, v in body.items():
            self.params[k] = np.array(v, dtype=np.float64)


_SHAPES: dict[ModelConfig, dict[str, tuple]] = {}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    if cfg not in _SHAPES:
        _SHAPES[cfg] = {k: v.shape for k, v in init_params(cfg, 0).items()}
    return dict(_SHAPES[cfg])


# ---------------------------------------------------------------- FNO baseline


def init_baseline_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    p = init_fno_params(cfg, rng)
    p["head.w"] = _uniform(rng, (cfg.N, cfg.l), 1.0 / np.sqrt(cfg.l))
    p["head.b"] = np.zeros(cfg.N)
    return p


class FNOBaseline:
    """Single-task FNO: the same FNO stack as UPSModel followed by a 1x1 head."""

    def __init__(self, cfg: ModelConfig, params: dict | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = init_baseline_params(cfg, seed) if params is None else {k: np.array(v) for k, v in params.items()}

    def register(self, g: Graph, trainable=lambda name: True) -> dict[str, G.Node]:
        return {k: g.param(k, v, trainable=trainable(k)) for k, v in self.params.items()}

    def forward(self, g: Graph, x, metadata=None, P: dict | None = None) -> Forward:
        if P is None:
            P = self.register(g)
        x = x if isinstance(x, G.Node) else g.const(x)
        h = fno_stack(x, P, self.cfg)
        pred = pointwise(h, P["head.w"], P["head.b"])
        return Forward(pred, None, None, None)

    def predict(self, x: np.ndarray, metadata=None, batch_size: int = 64) -> np.ndarray:
        outs = []
        for s in range(0, x.shape[0], batch_size):
            outs.append(self.forward(Graph(record=False), x[s : s + batch_size]).pred.value)
        return np.concatenate(outs)

    def copy(self) -> "FNOBaseline":
        return FNOBaseline(self.cfg, {k: v.copy() for k, v in self.params.items()})
