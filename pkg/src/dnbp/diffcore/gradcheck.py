"""Central finite-difference oracle for parameter gradients.

Runs in float64 on a deep copy of the module. For each input sample it
compares the autograd gradient against central differences, either for every
parameter coordinate or for a sampled subset plus random directions (used
for the conv encoder, where a full sweep over 128x128 inputs is too slow).

ReLU and max-pool make the networks piecewise smooth. When the +-h stencil
straddles a kink the central difference is meaningless, so each difference
is recomputed at h/10; where the two disagree the step keeps shrinking (down
to h/1000) until consecutive estimates agree.
"""
from __future__ import annotations

import copy
from typing import Callable

import numpy as np
import torch
from torch import nn
from torch.func import functional_call, grad, jacrev, vmap


class _Scalarized(nn.Module):
    def __init__(self, module: nn.Module, f: Callable):
        super().__init__()
        self.inner = module
        self.f = f

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.f(self.inner, x)


def relative_errors(module: nn.Module, f: Callable[[nn.Module, torch.Tensor], torch.Tensor],
                    inputs: torch.Tensor, h: float = 1e-3,
                    coords: np.ndarray | None = None, n_directions: int = 0,
                    seed: int = 0, refinements: int = 3, agree_tol: float = 1e-5,
                    chunk: int = 256) -> np.ndarray:
    """Per-sample relative error ||analytic - numeric|| / max(||analytic||, ||numeric||).

    ``f(module, x)`` must return one scalar per row of ``x``. ``coords`` picks
    the parameter coordinates to difference (all when None); ``n_directions``
    adds that many random unit directions in parameter space. ``chunk`` is
    how many perturbed parameter vectors are evaluated together (1 disables
    batching, which suits large inputs).
    """
    model = _Scalarized(copy.deepcopy(module).double(), f)
    inputs = inputs.double()
    names = [n for n, _ in model.named_parameters()]
    shapes = [p.shape for _, p in model.named_parameters()]
    sizes = [p.numel() for _, p in model.named_parameters()]
    theta = torch.cat([p.detach().reshape(-1) for p in model.parameters()])

    def unflatten(vec: torch.Tensor) -> dict[str, torch.Tensor]:
        return {n: t.reshape(s) for n, t, s in zip(names, vec.split(sizes), shapes)}

    def outputs(vec: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        return functional_call(model, unflatten(vec), (x,))

    if chunk == 1:
        # one backward pass per sample keeps memory flat for image inputs
        single = grad(lambda v, x: outputs(v, x[None]).sum())
        analytic = torch.stack([single(theta, inputs[i]) for i in range(inputs.shape[0])])
    else:
        analytic = jacrev(outputs)(theta, inputs)   # (N, P)

    def evaluate_many(vecs: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        """(K, P) parameter vectors -> (K, len(x)) outputs."""
        with torch.no_grad():
            if vecs.shape[0] == 1 or chunk == 1:
                return torch.stack([functional_call(model, unflatten(v), (x,)) for v in vecs])
            run = vmap(lambda v: functional_call(model, unflatten(v), (x,)))
            return torch.cat([run(c) for c in vecs.split(chunk)])

    def difference(dirs: torch.Tensor, step: float, x: torch.Tensor) -> torch.Tensor:
        return (evaluate_many(theta + step * dirs, x)
                - evaluate_many(theta - step * dirs, x)) / (2 * step)

    def central(dirs: torch.Tensor) -> torch.Tensor:
        """(K, P) unit directions -> (K, N) kink-aware central differences."""
        step = h
        est = difference(dirs, step, inputs)
        active = torch.ones_like(est, dtype=torch.bool)
        for _ in range(refinements):
            step /= 10
            rows = active.any(1).nonzero().flatten()
            if len(rows) == 0:
                break
            if chunk == 1:
                # refine only the samples whose estimate is still moving
                finer = torch.zeros(len(rows), est.shape[1], dtype=est.dtype)
                for i, k in enumerate(rows.tolist()):
                    cols = active[k].nonzero().flatten()
                    finer[i, cols] = difference(dirs[k:k + 1], step, inputs[cols])[0]
            else:
                finer = difference(dirs[rows], step, inputs)
            moved = active[rows] & ((finer - est[rows]).abs() > agree_tol * (1.0 + finer.abs()))
            est[rows] = torch.where(moved, finer, est[rows])
            active[rows] = moved
        return est

    coords = np.arange(theta.numel()) if coords is None else np.asarray(coords)
    num_cols, ana_cols = [], []
    for block in np.array_split(coords, max(1, -(-len(coords) // chunk))):
        if len(block) == 0:
            continue
        dirs = torch.zeros(len(block), theta.numel(), dtype=theta.dtype)
        dirs[torch.arange(len(block)), torch.as_tensor(block, dtype=torch.long)] = 1.0
        num_cols.append(central(dirs))
        ana_cols.append(analytic[:, torch.as_tensor(block, dtype=torch.long)].T)
    if n_directions:
        gen = torch.Generator().manual_seed(seed)
        rand = torch.randn(n_directions, theta.numel(), generator=gen, dtype=theta.dtype)
        rand = rand / rand.norm(dim=1, keepdim=True)
        num_cols.append(central(rand))
        ana_cols.append(rand @ analytic.T)
    num = torch.cat(num_cols).T    # (N, K)
    ana = torch.cat(ana_cols).T
    diff = (num - ana).norm(dim=1)
    scale = torch.maximum(num.norm(dim=1), ana.norm(dim=1)).clamp_min(1e-12)
    err = torch.where(diff == 0, torch.zeros_like(diff), diff / scale)
    return err.numpy()


def stratified_coords(module: nn.Module, per_tensor: int, seed: int = 0) -> np.ndarray:
    """Flat parameter indices with up to ``per_tensor`` picks from every parameter tensor."""
    rng = np.random.default_rng(seed)
    out, offset = [], 0
    for p in module.parameters():
        n = p.numel()
        out.append(offset + rng.choice(n, size=min(per_tensor, n), replace=False))
        offset += n
    return np.sort(np.concatenate(out))
