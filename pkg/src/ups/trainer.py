"""Losses, Adam, the two training stages and few-shot adaptation."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

import numpy as np

from .gradkit import Graph
from .gradkit import graph as G
from .gradkit.serialize import load_weights, save_weights
from .unirep import FamilyData, make_batch
from .upsnet import UPSModel, param_group, tokenize_meta

log = logging.getLogger(__name__)

STAGE1_GROUPS = {
    "embedder+predictor": {"fno", "proj", "meta", "mix", "predictor"},
    "embedder": {"fno", "proj", "meta", "mix"},
    "all": {"fno", "proj", "meta", "mix", "body", "predictor"},
}


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 5e-5
    weight_decay: float = 1e-5
    grad_clip: float = -1.0  # <= 0 disables clipping
    dropout: float = 0.0
    stage1_epochs: int = 20
    stage2_epochs: int = 40
    fewshot_lr: float = 1e-5
    fewshot_epochs: int = 100
    seed: int = 0
    mmd_bandwidth: str = "median"  # "median" or a positive number
    align_weight: float = 1.0
    task_weight: float = 1.0
    stage1_trainable: str = "embedder+predictor"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dtype: str = "float64"
    checkpoint_every: int = 0  # epochs; 0 disables
    eval_every: int = 1

    def __post_init__(self):
        if self.lr <= 0 or self.fewshot_lr <= 0:
            raise ValueError("learning rates must be positive")
        if min(self.stage1_epochs, self.stage2_epochs, self.fewshot_epochs) < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.stage1_trainable not in STAGE1_GROUPS:
            raise ValueError(f"stage1_trainable must be one of {sorted(STAGE1_GROUPS)}")
        if self.dropout != 0.0:
            raise ValueError("dropout is fixed at 0")
        if self.mmd_bandwidth != "median":
            if float(self.mmd_bandwidth) <= 0:
                raise ValueError("mmd_bandwidth must be 'median' or positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# ---------------------------------------------------------------- losses


def nrmse_per_sample(pred: np.ndarray, target: np.ndarray, valid: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """||valid * (pred - target)|| / ||valid * target|| per leading index;
    NaN where the target norm is below ``eps``."""
    axes = tuple(range(1, pred.ndim))
    num = np.sqrt(np.sum(valid * (pred - target) ** 2, axis=axes))
    den = np.sqrt(np.sum(valid * target**2, axis=axes))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > eps, num / np.where(den > eps, den, 1.0), np.nan)


def _family_weights(families, keep: np.ndarray) -> np.ndarray:
    """Weights realising mean over families of the per-family sample mean."""
    fams = [f for f, k in zip(families, keep) if k]
    uniq = sorted(set(fams))
    w = np.zeros(len(families))
    for i, (f, k) in enumerate(zip(families, keep)):
        if k:
            w[i] = 1.0 / (fams.count(f) * len(uniq))
    return w


def nrmse_loss(pred, target: np.ndarray, valid: np.ndarray, families=None, eps: float = 1e-12):
    """Masked nRMSE averaged per family, then over families.

    ``pred`` may be a graph node (returns a node) or an array (returns a
    float). Samples whose target norm is below ``eps`` are skipped.
    """
    B = target.shape[0]
    families = ["_"] * B if families is None else list(families)
    axes = tuple(range(1, target.ndim))
    den = np.sqrt(np.sum(valid * target**2, axis=axes))
    keep = den > eps
    if not np.all(keep):
        log.warning("nrmse: %d sample(s) with zero-norm target skipped", int(np.sum(~keep)))
    if not np.any(keep):
        raise NumericalError("nrmse: every target in the batch has zero norm")
    coef = _family_weights(families, keep) / np.where(keep, den, 1.0)
    if isinstance(pred, G.Node):
        sq = G.mul_const(G.square(G.add_const(pred, -target)), valid)
        num = G.sqrt(G.sum(sq, axis=axes))
        return G.sum(G.mul_const(num, coef))
    num = np.sqrt(np.sum(valid * (pred - target) ** 2, axis=axes))
    return float(np.sum(num * coef))


def median_bandwidth(A: np.ndarray, B: np.ndarray, floor: float = 1e-6) -> float:
    """Median pairwise Euclidean distance over the union of both sets."""
    U = np.concatenate([A, B])
    sq = np.sum(U * U, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * U @ U.T, 0.0)
    iu = np.triu_indices(len(U), k=1)
    return max(float(np.median(np.sqrt(d2[iu]))), floor)


def _kernel_mean(X, Y, sigma: float):
    """Mean Gaussian kernel value over all pairs (graph nodes)."""
    a, e = X.shape
    b = Y.shape[0]
    diff = G.sub(G.broadcast_to(G.reshape(X, (a, 1, e)), (a, b, e)), G.broadcast_to(G.reshape(Y, (1, b, e)), (a, b, e)))
    d2 = G.sum(G.square(diff), axis=2)
    return G.mean(G.exp(G.scale(d2, -1.0 / (2.0 * sigma**2))))


def mmd_loss(A, B, bandwidth="median"):
    """Biased (V-statistic) squared MMD with a Gaussian kernel.

    ``A`` and ``B`` are ``[count, e]`` arrays or graph nodes. The median
    bandwidth is computed from the values and treated as a constant.
    """
    as_array = not isinstance(A, G.Node) and not isinstance(B, G.Node)
    g = A.graph if isinstance(A, G.Node) else B.graph if isinstance(B, G.Node) else Graph(record=False)
    A = A if isinstance(A, G.Node) else g.const(A)
    B = B if isinstance(B, G.Node) else g.const(B)
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise ValueError("mmd needs at least two vectors per set")
    sigma = median_bandwidth(A.value, B.value) if bandwidth == "median" else max(float(bandwidth), 1e-6)
    kaa = _kernel_mean(A, A, sigma)
    kab = _kernel_mean(A, B, sigma)
    kbb = _kernel_mean(B, B, sigma)
    out = G.add(G.sub(kaa, G.scale(kab, 2.0)), kbb)
    return float(out.value) if as_array else out


# ---------------------------------------------------------------- reference features


def load_reference_corpus(path: str | os.PathLike | None = None) -> list[str]:
    if path is None:
        text = resources.files("ups").joinpath("data/reference_corpus.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    return text.splitlines()


def reference_features(corpus: list[str], model: UPSModel) -> np.ndarray:
    """One vector per non-empty line: mean of its token embeddings."""
    table = model.params["meta.embedding"]
    rows = []
    for line in corpus:
        line = line.strip()
        if not line:
            continue
        ids = tokenize_meta(line, max_len=len(line.encode("utf-8")))
        rows.append(table[ids].mean(axis=0))
    if not rows:
        raise ValueError("reference corpus has no non-empty lines")
    return np.stack(rows)


# ---------------------------------------------------------------- optimiser


@dataclass
class TrainState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    stage: int = 0
    epoch: int = 0  # epochs completed in the current stage
    rows: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"step": self.step, "stage": self.stage, "epoch": self.epoch, "rows": self.rows}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: TrainState, cfg: TrainConfig, lr: float | None = None) -> None:
    """In-place Adam with bias correction and decoupled weight decay:
    ``p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)``."""
    lr = cfg.lr if lr is None else lr
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    if cfg.grad_clip > 0:
        total = np.sqrt(sum(float(np.sum(np.asarray(g, dtype=np.float64) ** 2)) for g in grads.values()))
        if total > cfg.grad_clip:
            grads = {k: g * (cfg.grad_clip / total) for k, g in grads.items()}
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name in sorted(grads):
        g = np.asarray(grads[name], dtype=np.float64)
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        p *= 1.0 - lr * cfg.weight_decay
        p -= lr * update


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, model, state: TrainState, cfg: TrainConfig, extra: dict | None = None) -> None:
    tensors = dict(model.params)
    tensors.update({f"adam.m.{k}": v for k, v in state.m.items()})
    tensors.update({f"adam.v.{k}": v for k, v in state.v.items()})
    save_weights(path, tensors)
    side = {
        "config": model.cfg.to_dict(),
        "train": asdict(cfg),
        "state": state.to_json(),
        **(extra or {}),
    }
    tmp = f"{os.fspath(path)}.json.tmp"
    with open(tmp, "w") as f:
        json.dump(side, f, indent=1, sort_keys=True)
    os.replace(tmp, f"{os.fspath(path)}.json")


def load_checkpoint(path, model_cls=UPSModel):
    from .upsnet import ModelConfig

    with open(f"{os.fspath(path)}.json") as f:
        side = json.load(f)
    tensors = load_weights(path)
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    model = model_cls(ModelConfig(**side["config"]), params)
    st = side["state"]
    state = TrainState(
        m={k[len("adam.m."):]: v for k, v in tensors.items() if k.startswith("adam.m.")},
        v={k[len("adam.v."):]: v for k, v in tensors.items() if k.startswith("adam.v.")},
        step=st["step"],
        stage=st["stage"],
        epoch=st["epoch"],
        rows=st["rows"],
    )
    return model, state, TrainConfig.from_dict(side["train"]), side


# ---------------------------------------------------------------- training loops


def pair_pool(datasets: list[FamilyData]) -> np.ndarray:
    """Every teacher-forcing pair of every dataset as ``(dataset, traj, t)``."""
    parts = []
    for i, ds in enumerate(datasets):
        p = ds.pairs()
        parts.append(np.column_stack([np.full(len(p), i), p]))
    return np.concatenate(parts) if parts else np.zeros((0, 3), dtype=np.int64)


def epoch_order(n: int, seed: int, stage: int, epoch: int) -> np.ndarray:
    """Shuffle for one epoch, derived only from (seed, stage, epoch) so a
    resumed run sees the same batches as an uninterrupted one."""
    return np.random.default_rng([seed, stage, epoch]).permutation(n)


def _dtype(cfg: TrainConfig):
    return {"float64": np.float64, "float32": np.float32}[cfg.dtype]


def train_step(model, batch, cfg: TrainConfig, state: TrainState, trainable, ref_feats=None, lr=None):
    """One optimiser step; returns (loss_align, loss_task) as floats."""
    g = Graph(dtype=_dtype(cfg))
    P = model.register(g, trainable)
    use_meta = getattr(model.cfg, "use_meta", False)
    f = model.forward(g, batch.inputs, batch.metadata if use_meta else None, P)
    task = nrmse_loss(f.pred, batch.targets, batch.valid, batch.families)
    total = G.scale(task, cfg.task_weight)
    align_val = float("nan")
    # a one-sample batch has no distribution to align; the term is skipped
    if ref_feats is not None and len(batch) >= 2 and len(ref_feats) >= 2:
        if cfg.align_weight != 0.0:
            align = mmd_loss(f.pooled_mix, ref_feats, cfg.mmd_bandwidth)
            align_val = float(align.value)
            total = G.add(total, G.scale(align, cfg.align_weight))
        else:
            align_val = mmd_loss(f.pooled_mix.value, ref_feats, cfg.mmd_bandwidth)
    if not np.isfinite(total.value):
        raise NumericalError(f"non-finite loss at step {state.step + 1} (task={task.value}, align={align_val})")
    grads = g.backward(total)
    adam_step(model.params, grads, state, cfg, lr)
    return align_val, float(task.value)


def run_stage(
    model,
    datasets: list[FamilyData],
    cfg: TrainConfig,
    state: TrainState,
    stage: int,
    epochs: int,
    trainable,
    ref_feats=None,
    lr=None,
    on_epoch_end=None,
    checkpoint_path=None,
    stop_after_epoch: int | None = None,
    on_batch=None,
):
    """Run (or resume) ``epochs`` epochs of one stage.

    ``on_epoch_end(epoch, loss_align, loss_task)`` may append report rows;
    ``on_batch(epoch, batch)`` sees every batch before its step.
    ``stop_after_epoch`` ends the call early (used to simulate interruption).
    """
    if state.stage != stage:
        state.stage, state.epoch = stage, 0
    pool = pair_pool(datasets)
    if len(pool) == 0:
        raise ValueError("no training pairs")
    while state.epoch < epochs:
        epoch = state.epoch
        order = epoch_order(len(pool), cfg.seed, stage, epoch)
        aligns, tasks, sizes = [], [], []
        for s in range(0, len(order), cfg.batch_size):
            picks = pool[order[s : s + cfg.batch_size]]
            batch = make_batch(datasets, picks, use_coords=model.cfg.use_coords)
            if on_batch is not None:
                on_batch(epoch, batch)
            a, t = train_step(model, batch, cfg, state, trainable, ref_feats, lr)
            aligns.append(a)
            tasks.append(t)
            sizes.append(len(picks))
        sizes = np.asarray(sizes, dtype=np.float64)
        aligns = np.asarray(aligns)
        ok = np.isfinite(aligns)
        loss_align = float(np.sum(sizes[ok] * aligns[ok]) / np.sum(sizes[ok])) if np.any(ok) else float("nan")
        loss_task = float(np.sum(sizes * np.asarray(tasks)) / np.sum(sizes))
        state.epoch += 1
        log.info("stage %d epoch %d/%d: align %.5g task %.5g", stage, epoch + 1, epochs, loss_align, loss_task)
        if on_epoch_end is not None:
            on_epoch_end(epoch, loss_align, loss_task)
        if checkpoint_path is not None and cfg.checkpoint_every > 0 and state.epoch % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, model, state, cfg)
        if stop_after_epoch is not None and state.epoch >= stop_after_epoch:
            break
    return state


def stage1_trainable(cfg: TrainConfig):
    groups = STAGE1_GROUPS[cfg.stage1_trainable]
    return lambda name: param_group(name) in groups


def stage1_train(model, datasets, corpus, cfg: TrainConfig, state: TrainState | None = None, ref_feats=None, **kw) -> TrainState:
    """Embedding pretraining: task loss plus alignment of pooled h_mix to the
    reference text features; the transformer body stays frozen by default.
    Reference features are taken once from the embedding table at the start
    of the stage (or passed in as ``ref_feats``) and held fixed as the
    alignment target."""
    state = state or TrainState()
    ref = reference_features(corpus, model) if ref_feats is None else np.asarray(ref_feats, dtype=np.float64)
    return run_stage(model, datasets, cfg, state, 1, cfg.stage1_epochs, stage1_trainable(cfg), ref_feats=ref, **kw)


def stage2_train(model, datasets, cfg: TrainConfig, state: TrainState | None = None, **kw) -> TrainState:
    """Fine-tune every parameter on the task loss over the mixed pair pool."""
    state = state or TrainState()
    return run_stage(model, datasets, cfg, state, 2, cfg.stage2_epochs, lambda name: True, **kw)


def select_fewshot(data: FamilyData, k: int, seed: int) -> FamilyData:
    """``k`` trajectories drawn by a seeded permutation; sets for larger k
    contain those for smaller k."""
    if k > data.num_traj:
        raise ValueError(f"k={k} exceeds the {data.num_traj} available trajectories")
    perm = np.random.default_rng([seed, 1729]).permutation(data.num_traj)
    return data.subset(np.sort(perm[:k]))


def fewshot_adapt(model, data: FamilyData, k: int, cfg: TrainConfig, **kw):
    """Fine-tune a copy of ``model`` on ``k`` trajectories at the few-shot
    learning rate. ``k = 0`` returns the model itself (zero-shot)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    subset = select_fewshot(data, k, cfg.seed)
    if k == 0:
        return model
    adapted = model.copy()
    state = TrainState()
    run_stage(adapted, [subset], cfg, state, 3, cfg.fewshot_epochs, lambda name: True, lr=cfg.fewshot_lr, **kw)
    return adapted
