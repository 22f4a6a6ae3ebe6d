"""MRF topology and the learned potential networks.

Each hidden node ``d`` owns a unary potential (conv encoder ``f_d`` feeding a
fully connected head ``l_d``) and a diffusion sampler. Each edge ``(a, b)``
owns a pairwise density network evaluated on ``x_a - x_b`` and a pairwise
sampler producing translations from 64-d Gaussian noise::

    x_{a|b} = x_b + sampler(eps)        x_{b|a} = x_a - sampler(eps)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from dnbp.diffcore import MLP, ConvEncoder, ScaledSigmoid, frozen_call
from dnbp.errors import ConfigError, DataError, ShapeError

NOISE_DIM = 64
FEATURE_DIM = 10

Edge = tuple[int, int]


@dataclass(frozen=True)
class GraphSpec:
    name: str
    nodes: tuple[int, ...]
    edges: tuple[Edge, ...]
    neighbors: dict[int, tuple[int, ...]] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if len(set(self.nodes)) != len(self.nodes):
            raise ConfigError(f"graph {self.name}: duplicate node ids")
        if list(self.nodes) != list(range(len(self.nodes))):
            raise ConfigError(f"graph {self.name}: node ids must be 0..n-1 in order")
        seen = set()
        nbrs: dict[int, list[int]] = {n: [] for n in self.nodes}
        for a, b in self.edges:
            if a == b:
                raise ConfigError(f"graph {self.name}: self-loop on node {a}")
            if a not in nbrs or b not in nbrs:
                raise ConfigError(f"graph {self.name}: edge ({a},{b}) references unknown node")
            key = frozenset((a, b))
            if key in seen:
                raise ConfigError(f"graph {self.name}: duplicate edge ({a},{b})")
            seen.add(key)
            nbrs[a].append(b)
            nbrs[b].append(a)
        object.__setattr__(self, "neighbors", {n: tuple(sorted(v)) for n, v in nbrs.items()})

    def edge_key(self, s: int, d: int) -> Edge:
        """Canonical (as declared) orientation of the edge joining s and d."""
        if (s, d) in self.edges:
            return (s, d)
        if (d, s) in self.edges:
            return (d, s)
        raise KeyError(f"no edge between {s} and {d} in graph {self.name}")

    def directed_edges(self) -> list[Edge]:
        """All (source, destination) pairs, ordered by destination then source."""
        return [(s, d) for d in self.nodes for s in self.neighbors[d]]

    def to_text(self) -> str:
        lines = [f"name {self.name}", "nodes " + " ".join(map(str, self.nodes))]
        lines += [f"edge {a} {b}" for a, b in self.edges]
        return "\n".join(lines) + "\n"


def pendulum_graph() -> GraphSpec:
    return GraphSpec("pendulum", (0, 1, 2), ((0, 1), (1, 2)))


def spider_graph() -> GraphSpec:
    return GraphSpec("spider", tuple(range(7)), ((0, 1), (0, 2), (0, 3), (1, 4), (2, 5), (3, 6)))


def parse_graph(text: str) -> GraphSpec:
    """Parse ``name``/``nodes``/``edge`` lines; ``#`` starts a comment."""
    name, nodes, edges = "custom", None, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        try:
            if key == "name" and len(rest) == 1:
                name = rest[0]
            elif key == "nodes":
                nodes = tuple(int(v) for v in rest)
            elif key == "edge" and len(rest) == 2:
                edges.append((int(rest[0]), int(rest[1])))
            else:
                raise ValueError
        except ValueError:
            raise ConfigError(f"graph description line {lineno}: cannot parse {raw!r}") from None
    if nodes is None:
        raise ConfigError("graph description has no 'nodes' line")
    return GraphSpec(name, nodes, tuple(edges))


def get_graph(name_or_path: str) -> GraphSpec:
    if name_or_path == "pendulum":
        return pendulum_graph()
    if name_or_path == "spider":
        return spider_graph()
    p = Path(name_or_path)
    if p.is_file():
        return parse_graph(p.read_text())
    raise DataError(f"unknown graph {name_or_path!r} (expected pendulum, spider or a file)")


def _edge_name(e: Edge) -> str:
    return f"{e[0]}-{e[1]}"


class Potentials(nn.Module):
    """All learned networks for one graph."""

    def __init__(self, graph: GraphSpec):
        super().__init__()
        self.graph = graph
        self.encoders = nn.ModuleDict({str(n): ConvEncoder(f"f_{n}") for n in graph.nodes})
        feat = self.encoders[str(graph.nodes[0])].out_dim
        self.unary_heads = nn.ModuleDict({
            str(n): MLP(f"l_{n}", 2 + feat, [64, 64], 1, ScaledSigmoid()) for n in graph.nodes})
        self.diffusion = nn.ModuleDict({
            str(n): MLP(f"tau_{n}", NOISE_DIM, [64, 64], 2) for n in graph.nodes})
        self.pair_density = nn.ModuleDict({
            _edge_name(e): MLP(f"psi_rho_{_edge_name(e)}", 2, [32] * 4, 1, ScaledSigmoid())
            for e in graph.edges})
        self.pair_sampler = nn.ModuleDict({
            _edge_name(e): MLP(f"psi_tilde_{_edge_name(e)}", NOISE_DIM, [64, 64], 2)
            for e in graph.edges})

    def groups(self) -> dict[str, nn.Module]:
        """Parameter groups keyed by family and owner, for gradient bookkeeping."""
        out: dict[str, nn.Module] = {}
        for n in self.graph.nodes:
            out[f"unary.{n}"] = nn.ModuleList([self.encoders[str(n)], self.unary_heads[str(n)]])
            out[f"diffusion.{n}"] = self.diffusion[str(n)]
        for e in self.graph.edges:
            out[f"pair_density.{_edge_name(e)}"] = self.pair_density[_edge_name(e)]
            out[f"pair_sampler.{_edge_name(e)}"] = self.pair_sampler[_edge_name(e)]
        return out

    # --- unary -----------------------------------------------------------
    def encode_observation(self, node: int, images: torch.Tensor, stop: bool = False) -> torch.Tensor:
        """images: (B, 128, 128, 3) on the 0-255 scale -> (B, 10) features."""
        if images.dim() != 4 or images.shape[-1] != 3:
            raise ShapeError(f"f_{node}", (None, 128, 128, 3), images.shape)
        x = images.float().permute(0, 3, 1, 2) / 255.0
        enc = self.encoders[str(node)]
        return frozen_call(enc, x) if stop else enc(x)

    def unary(self, node: int, particles: torch.Tensor, features: torch.Tensor,
              log: bool = False, stop: bool = False) -> torch.Tensor:
        """particles (B, ..., 2), features (B, F) -> weights (B, ...) in [0.005, 1]."""
        b = particles.shape[0]
        if features.shape[0] != b:
            raise ShapeError(f"l_{node}", (b, None), features.shape)
        f = features.reshape(b, *([1] * (particles.dim() - 2)), features.shape[-1])
        f = f.expand(*particles.shape[:-1], features.shape[-1])
        x = torch.cat([particles, f], -1)
        head = self.unary_heads[str(node)]
        out = frozen_call(head, x, log=log) if stop else head(x, log=log)
        return out.squeeze(-1)

    # --- pairwise --------------------------------------------------------
    def pairwise_density(self, edge: Edge, delta: torch.Tensor, log: bool = False) -> torch.Tensor:
        """Density of edge (a, b) at delta = x_a - x_b; shape (..., 2) -> (...)."""
        return self.pair_density[_edge_name(edge)](delta, log=log).squeeze(-1)

    def density_between(self, s: int, d: int, x_s: torch.Tensor, x_d: torch.Tensor,
                        log: bool = False) -> torch.Tensor:
        a, b = self.graph.edge_key(s, d)
        delta = x_s - x_d if (a, b) == (s, d) else x_d - x_s
        return self.pairwise_density((a, b), delta, log=log)

    def pairwise_translation(self, edge: Edge, eps: torch.Tensor) -> torch.Tensor:
        return self.pair_sampler[_edge_name(edge)](eps)

    def pairwise_sample(self, edge: Edge, conditioner: torch.Tensor, direction: str,
                        eps: torch.Tensor) -> torch.Tensor:
        """direction 'first|second' samples x_a given x_b; 'second|first' the reverse."""
        t = self.pairwise_translation(edge, eps)
        if direction == "first|second":
            return conditioner + t
        if direction == "second|first":
            return conditioner - t
        raise ValueError(f"unknown direction {direction!r}")

    def sample_node_given(self, target: int, given: int, conditioner: torch.Tensor,
                          eps: torch.Tensor) -> torch.Tensor:
        a, b = self.graph.edge_key(target, given)
        direction = "first|second" if a == target else "second|first"
        return self.pairwise_sample((a, b), conditioner, direction, eps)

    # --- diffusion -------------------------------------------------------
    def diffusion_sample(self, node: int, particles: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
        return particles + self.diffusion[str(node)](eps)
