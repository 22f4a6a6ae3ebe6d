"""Named parameter groups with per-group gradient stop flags.

Reverse-mode differentiation itself is delegated to torch autograd; this
module adds the bookkeeping the training loop needs: a group whose stop flag
is set is evaluated with detached parameters, so any backward pass through
that use contributes exactly zero gradient to the group.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Any, Callable, Iterator, Mapping

import torch
from torch import nn
from torch.func import functional_call

from dnbp.errors import DNBPError, ShapeError


def frozen_call(module: nn.Module, *args: Any, **kwargs: Any) -> Any:
    """Call ``module`` with detached copies of its parameters.

    Gradients still flow to the inputs, never to the module's parameters.
    """
    params = {k: v.detach() for k, v in module.named_parameters()}
    return functional_call(module, params, args, kwargs)


class Tape:
    """Records one forward pass over named parameter groups.

    >>> tape = Tape({"a": nn.Linear(2, 1)})
    >>> out = tape.forward(lambda t, x: t.call("a", x).sum(), x=torch.ones(3, 2))
    >>> grads = tape.backward()
    """

    def __init__(self, groups: Mapping[str, nn.Module]):
        self.groups = dict(groups)
        self.stop_flags: dict[str, bool] = {name: False for name in self.groups}
        self._output: torch.Tensor | None = None

    @contextmanager
    def stopped(self, *names: str) -> Iterator["Tape"]:
        previous = {n: self.stop_flags[n] for n in names}
        for n in names:
            self.stop_flags[n] = True
        try:
            yield self
        finally:
            self.stop_flags.update(previous)

    def call(self, name: str, *args: Any, **kwargs: Any) -> Any:
        module = self.groups[name]
        if self.stop_flags[name]:
            return frozen_call(module, *args, **kwargs)
        return module(*args, **kwargs)

    def forward(self, fn: Callable[..., torch.Tensor], **inputs: torch.Tensor) -> torch.Tensor:
        self._output = fn(self, **inputs)
        return self._output

    def backward(self, seed: torch.Tensor | None = None,
                 retain_graph: bool = False) -> dict[str, dict[str, torch.Tensor]]:
        """Gradient of the recorded output for every parameter of every group.

        Groups (or parameters) the output does not depend on get zero tensors.
        """
        if self._output is None:
            raise DNBPError("backward called before forward")
        out = self._output
        if seed is None:
            if out.numel() != 1:
                raise ShapeError("backward seed", (), out.shape)
            seed = torch.ones_like(out)
        elif seed.shape != out.shape:
            raise ShapeError("backward seed", tuple(out.shape), seed.shape)
        names, params = [], []
        for g, module in self.groups.items():
            for pname, p in module.named_parameters():
                names.append((g, pname))
                params.append(p)
        grads = torch.autograd.grad(out, params, grad_outputs=seed, allow_unused=True,
                                    retain_graph=retain_graph) if params else ()
        result: dict[str, dict[str, torch.Tensor]] = {g: {} for g in self.groups}
        for (g, pname), p, gr in zip(names, params, grads):
            result[g][pname] = torch.zeros_like(p) if gr is None else gr
        if not retain_graph:
            self._output = None
        return result
