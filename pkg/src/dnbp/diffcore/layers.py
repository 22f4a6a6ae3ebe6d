"""Layer set used by the potential networks.

Only what the potential architectures need: 3x3 stride-2 convolutions with
2x2 ceil-mode pooling, ReLU MLPs, a sigmoid head rescaled to a closed interval,
and isotropic Gaussian densities.
"""
from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

from dnbp.errors import NumericError, ShapeError

DENSITY_FLOOR = 0.005
IMAGE_SIZE = 128


def check_finite(name: str, t: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(t).all():
        bad = (~torch.isfinite(t)).sum().item()
        raise NumericError(f"{name}: {bad} non-finite value(s) in tensor of shape {tuple(t.shape)}")
    return t


def init_uniform_fan_in(module: nn.Module) -> None:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases of Linear/Conv2d."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            fan_in = m.in_features
        elif isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
        else:
            continue
        bound = 1.0 / math.sqrt(fan_in)
        nn.init.uniform_(m.weight, -bound, bound)
        nn.init.uniform_(m.bias, -bound, bound)


class ScaledSigmoid(nn.Module):
    """Sigmoid affinely mapped onto [lo, hi]."""

    def __init__(self, lo: float = DENSITY_FLOOR, hi: float = 1.0):
        super().__init__()
        self.lo = lo
        self.hi = hi

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lo + (self.hi - self.lo) * torch.sigmoid(x)

    def log_forward(self, x: torch.Tensor) -> torch.Tensor:
        # log(lo + (hi-lo)*sigmoid(x)) without underflow for very negative x
        log_span = math.log(self.hi - self.lo)
        return torch.logaddexp(
            torch.full_like(x, math.log(self.lo)), log_span + F.logsigmoid(x)
        )


class MLP(nn.Module):
    """Stack of fully connected ReLU layers followed by a linear output layer.

    ``head`` optionally squashes the output (``ScaledSigmoid`` for density
    heads). ``forward(x, log=True)`` returns the log of the head output,
    computed without underflow for saturated sigmoids.
    """

    def __init__(self, name: str, in_dim: int, hidden: list[int], out_dim: int,
                 head: nn.Module | None = None):
        super().__init__()
        self.name = name
        self.in_dim = in_dim
        dims = [in_dim, *hidden]
        layers: list[nn.Module] = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(a, b), nn.ReLU()]
        layers.append(nn.Linear(dims[-1], out_dim))
        self.body = nn.Sequential(*layers)
        self.head = head
        init_uniform_fan_in(self)

    def _check(self, x: torch.Tensor) -> None:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(self.name, (..., self.in_dim), x.shape)
        check_finite(f"{self.name} input", x)

    def forward(self, x: torch.Tensor, log: bool = False) -> torch.Tensor:
        self._check(x)
        out = self.body(x)
        if log and isinstance(self.head, ScaledSigmoid):
            return self.head.log_forward(out)
        out = out if self.head is None else self.head(out)
        return torch.log(out) if log else out


class ConvEncoder(nn.Module):
    """Five [conv 3x3 stride 2 + ReLU, maxpool 2x2] blocks on a 128x128 RGB image.

    Convs use padding 1 and pools use ceil mode. A pool whose input is already
    1x1 is skipped, so a 128x128 input ends in a 1x1x10 map, flattened to 10.
    """

    def __init__(self, name: str = "encoder", channels: int = 10, blocks: int = 5,
                 image_size: int = IMAGE_SIZE):
        super().__init__()
        self.name = name
        self.image_size = image_size
        convs = []
        c_in = 3
        for _ in range(blocks):
            convs.append(nn.Conv2d(c_in, channels, 3, stride=2, padding=1))
            c_in = channels
        self.convs = nn.ModuleList(convs)
        self.out_dim = channels * self.output_hw() ** 2
        init_uniform_fan_in(self)

    def output_hw(self) -> int:
        hw = self.image_size
        for _ in self.convs:
            hw = (hw + 2 - 3) // 2 + 1
            if hw > 1:
                hw = -(-hw // 2)
        return hw

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """images: (B, 3, H, W) with values already scaled to [0, 1]."""
        if images.dim() != 4 or images.shape[1:] != (3, self.image_size, self.image_size):
            raise ShapeError(self.name, (None, 3, self.image_size, self.image_size), images.shape)
        check_finite(f"{self.name} input", images)
        x = images
        for conv in self.convs:
            x = F.relu(conv(x))
            if x.shape[-1] > 1 or x.shape[-2] > 1:
                x = F.max_pool2d(x, 2, 2, ceil_mode=True)
        return x.flatten(1)


def log_gaussian_density(x: torch.Tensor, mean: torch.Tensor, sigma: float) -> torch.Tensor:
    """Log density of an isotropic Gaussian N(mean, sigma^2 I) at x (last axis is the dimension)."""
    d = x.shape[-1]
    sq = ((x - mean) ** 2).sum(-1)
    return -0.5 * sq / sigma**2 - d * math.log(sigma) - 0.5 * d * math.log(2 * math.pi)


def gaussian_density(x: torch.Tensor, mean: torch.Tensor, sigma: float) -> torch.Tensor:
    return torch.exp(log_gaussian_density(x, mean, sigma))
