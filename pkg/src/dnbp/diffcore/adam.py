"""Adam with bias correction and optional global-norm clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import torch

from dnbp.errors import NumericError, ShapeError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ValueError("Adam hyperparameters out of range")


def global_grad_norm(grads: Mapping[str, torch.Tensor]) -> float:
    if not grads:
        return 0.0
    return float(torch.linalg.vector_norm(
        torch.stack([torch.linalg.vector_norm(g.double()) for g in grads.values()])))


def adam_step(params: Mapping[str, torch.Tensor], grads: Mapping[str, torch.Tensor],
              state: AdamState, clip_norm: float | None = None) -> AdamState:
    """Apply one Adam update to ``params`` in place.

    Raises NumericError (leaving params and state untouched) when any gradient
    is non-finite.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"adam:{name}", tuple(params[name].shape), g.shape)
    # one reduction screens every gradient; inf and nan both survive the norm
    norm = global_grad_norm(grads)
    if not math.isfinite(norm):
        bad = next(n for n, g in grads.items() if not torch.isfinite(g).all())
        raise NumericError(f"non-finite gradient for {bad}; step rejected")
    scale = 1.0
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            elif scale != 1.0:
                g = g * scale
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            v = state.v[name]
            m.mul_(state.beta1).add_(g, alpha=1 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1 - state.beta2)
            denom = (v / bc2).sqrt_().add_(state.eps)
            p.addcdiv_(m, denom, value=-state.lr / bc1)
    return state
