"""Central finite-difference checks for graph-built scalar functions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .graph import Graph, Node

Builder = Callable[[Graph, Mapping[str, Node]], Node]


@dataclass
class GradCheckResult:
    name: str
    analytic: float
    numeric: float
    rel_error: float
    kind: str


def evaluate(build: Builder, params: Mapping[str, np.ndarray], record: bool = False):
    g = Graph(np.float64, record=record)
    nodes = {k: g.param(k, v) for k, v in params.items()}
    loss = build(g, nodes)
    return g, loss


def analytic_grads(build: Builder, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    g, loss = evaluate(build, params, record=True)
    return g.backward(loss)


def _loss_at(build, params, name, arr) -> float:
    p = dict(params)
    p[name] = arr
    _, loss = evaluate(build, p)
    return float(np.real(loss.value).reshape(()))


def rel_error(a: float, b: float, floor: float = 1e-12) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradcheck(
    build: Builder,
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    entries_per_param: int = 3,
    seed: int = 0,
    floor: float | None = None,
) -> list[GradCheckResult]:
    """Compare analytic gradients against central differences.

    For every parameter tensor: one directional derivative along a random
    Gaussian direction (covers all entries at once) plus the
    ``entries_per_param`` entries with the largest analytic gradient.

    Relative errors use ``max(|a|, |b|, floor)`` as denominator. By default
    ``floor = 1e-6 * max(|L|, 1e-6)``: central differences carry roundoff of
    about eps * |L| / h, so derivatives far below that scale (for example the
    exactly-zero gradient of an attention key bias) cannot be resolved.
    """
    rng = np.random.default_rng(seed)
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    grads = analytic_grads(build, params)
    if floor is None:
        loss0 = abs(float(np.real(evaluate(build, params)[1].value).reshape(())))
        floor = 1e-6 * max(loss0, 1e-6)
    results = []
    for name, value in params.items():
        grad = grads[name]
        direction = rng.standard_normal(value.shape)
        analytic = float(np.sum(grad * direction))
        numeric = (
            _loss_at(build, params, name, value + h * direction)
            - _loss_at(build, params, name, value - h * direction)
        ) / (2 * h)
        results.append(GradCheckResult(name, analytic, numeric, rel_error(analytic, numeric, floor), "direction"))
        flat = np.argsort(-np.abs(grad).ravel(), kind="stable")[:entries_per_param]
        for idx in flat:
            if grad.ravel()[idx] == 0.0:
                continue
            bump = np.zeros(value.size)
            bump[idx] = h
            bump = bump.reshape(value.shape)
            numeric = (
                _loss_at(build, params, name, value + bump) - _loss_at(build, params, name, value - bump)
            ) / (2 * h)
            a = float(grad.ravel()[idx])
            results.append(GradCheckResult(f"{name}[{idx}]", a, numeric, rel_error(a, numeric, floor), "entry"))
    return results
