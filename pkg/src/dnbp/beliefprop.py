"""Particle message and belief updates with resampling moved to the front.

All tensors carry a leading batch axis ``B`` so several sequences advance in
lockstep. Particles live in normalized image coordinates.

Per frame the schedule is: one message update per directed edge (reading only
the previous frame's beliefs and messages), then one belief update per node.
Resampling draws from detached previous beliefs, so gradients of a frame's
loss never reach earlier frames.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import torch

from dnbp.errors import DataError, DNBPError
from dnbp.graph import NOISE_DIM, Edge, GraphSpec, Potentials

log = logging.getLogger(__name__)

PROPOSAL_LOW, PROPOSAL_HIGH = -1.0, 1.0


@dataclass
class Message:
    """Weighted particles for the destination's variable, sent source -> destination."""
    source: int
    destination: int
    particles: torch.Tensor   # (B, M, 2)
    weights: torch.Tensor     # (B, M)
    w_unary: torch.Tensor     # (B, M) sender unary averaged over U samples
    w_neigh: torch.Tensor     # (B, M) product over the sender's other neighbors
    frame: int = 0

    def detach(self) -> "Message":
        return replace(self, particles=self.particles.detach(), weights=self.weights.detach(),
                       w_unary=self.w_unary.detach(), w_neigh=self.w_neigh.detach())


@dataclass
class Belief:
    """Union of a node's incoming messages, T = M * |neighbors| particles (M if isolated)."""
    node: int
    particles: torch.Tensor    # (B, T, 2)
    weights: torch.Tensor      # (B, T), rows sum to one
    unary_d: torch.Tensor      # (B, T) destination unary at each particle
    unary_s: torch.Tensor      # (B, T) sender unary of the originating message
    neigh_s: torch.Tensor      # (B, T) neighbor term of the originating message
    sources: tuple[int, ...] = ()   # originating neighbor per block of M particles
    frame: int = 0

    @property
    def size(self) -> int:
        return self.particles.shape[1]

    def detach(self) -> "Belief":
        return replace(self, particles=self.particles.detach(), weights=self.weights.detach(),
                       unary_d=self.unary_d.detach(), unary_s=self.unary_s.detach(),
                       neigh_s=self.neigh_s.detach())


@dataclass
class FrameState:
    """Everything the next frame's message updates read."""
    beliefs: dict[int, Belief] = field(default_factory=dict)
    messages: dict[Edge, Message] = field(default_factory=dict)
    frame: int = -1

    def detach(self) -> "FrameState":
        return FrameState({k: b.detach() for k, b in self.beliefs.items()},
                          {k: m.detach() for k, m in self.messages.items()}, self.frame)


@dataclass(frozen=True)
class InferenceConfig:
    particles: int = 100
    u_samples: int = 10
    gamma: float = 0.9
    mode: str = "train"   # train | eval

    def __post_init__(self):
        if self.particles < 2 or self.u_samples < 1 or not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"invalid inference config {self}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be train or eval, got {self.mode!r}")


def uniform_proposal(batch: int, n: int, gen: torch.Generator) -> torch.Tensor:
    u = torch.rand(batch, n, 2, generator=gen)
    return PROPOSAL_LOW + (PROPOSAL_HIGH - PROPOSAL_LOW) * u


def split_counts(m: int, gamma: float, mode: str) -> tuple[int, int]:
    """(resampled, uniform) particle counts; the resampled share rounds down."""
    if mode == "eval":
        return m, 0
    n_res = int(math.floor((1.0 - gamma) * m + 1e-9))
    return n_res, m - n_res


def resample_indices(weights: torch.Tensor, n: int, gen: torch.Generator) -> torch.Tensor:
    """Multinomial resampling: (B, T) weights -> (B, n) indices."""
    return torch.multinomial(weights, n, replacement=True, generator=gen)


def resample_and_diffuse(prev: Belief | None, m: int, gamma: float, mode: str,
                         gen: torch.Generator, potentials: Potentials | None = None,
                         node: int | None = None, batch: int | None = None) -> torch.Tensor:
    """Draw M candidate particles for a message from the previous belief.

    Without a previous belief (first frame) every particle comes from the
    uniform proposal. Diffusion is skipped when ``potentials`` is None.
    """
    if prev is None:
        if batch is None:
            raise DNBPError("batch size required when there is no previous belief")
        return uniform_proposal(batch, m, gen)
    if prev.size == 0:
        raise DNBPError(f"empty belief for node {prev.node}")
    b = prev.particles.shape[0]
    n_res, n_uni = split_counts(m, gamma, mode)
    w = prev.weights.detach()
    dead = ~(w.sum(-1) > 0)
    parts = []
    if n_res:
        if dead.any():
            log.warning("all-zero belief weights for node %s; using uniform proposal", prev.node)
            w = torch.where(dead[:, None], torch.ones_like(w), w)
        idx = resample_indices(w, n_res, gen)
        res = torch.gather(prev.particles.detach(), 1, idx[..., None].expand(-1, -1, 2))
        if potentials is not None:
            eps = torch.randn(b, n_res, NOISE_DIM, generator=gen)
            res = potentials.diffusion_sample(node if node is not None else prev.node, res, eps)
        if dead.any():
            res = torch.where(dead[:, None, None], uniform_proposal(b, n_res, gen), res)
        parts.append(res)
    if n_uni:
        parts.append(uniform_proposal(b, n_uni, gen))
    return torch.cat(parts, 1)


def neighbor_term(potentials: Potentials, s: int, d: int, mu: torch.Tensor,
                  prev_messages: dict[Edge, Message] | None, mode: str,
                  truth_s: torch.Tensor | None) -> torch.Tensor:
    """Product over u in rho(s)\\d of the pairwise evidence for candidates ``mu``.

    Train mode replaces each sum over incoming particles with one density
    evaluation at the sender's ground truth. Before the first frame there are
    no incoming messages and the term is the empty product.
    """
    graph = potentials.graph
    others = [u for u in graph.neighbors[s] if u != d]
    ones = torch.ones(mu.shape[:2], dtype=mu.dtype)
    if not others:
        return ones
    if mode == "train":
        if truth_s is None:
            raise DataError(f"train-mode message {s}->{d} needs the ground truth of node {s}")
        w = potentials.density_between(s, d, truth_s[:, None, :], mu)
        return w ** len(others)
    if prev_messages is None:
        return ones
    out = ones
    for u in others:
        msg = prev_messages.get((u, s))
        if msg is None:
            raise DataError(f"missing incoming message {u}->{s} for message {s}->{d}")
        # previous-frame messages sit behind the resampling boundary
        dens = potentials.density_between(s, d, msg.particles.detach()[:, None, :, :],
                                          mu[:, :, None, :])
        out = out * (dens * msg.weights.detach()[:, None, :]).sum(-1)
    return out


def message_update(potentials: Potentials, s: int, d: int, prev: FrameState | None,
                   features: dict[int, torch.Tensor], cfg: InferenceConfig,
                   gen: torch.Generator, truth: torch.Tensor | None = None,
                   frame: int = 0) -> Message:
    """Message s -> d: pull candidates from bel_d, weight them by s's evidence.

    ``truth`` is (B, V, 2); required in train mode. The sender's unary is
    evaluated with its parameters detached (its gradient must come only from
    its own belief update); gradients still reach the pairwise sampler through
    the sample positions.
    """
    feats_s = features[s]
    b = feats_s.shape[0]
    prev_bel = prev.beliefs.get(d) if prev is not None else None
    mu = resample_and_diffuse(prev_bel, cfg.particles, cfg.gamma, cfg.mode, gen,
                              potentials, d, batch=b)
    m = mu.shape[1]
    eps = torch.randn(b, m, cfg.u_samples, NOISE_DIM, generator=gen)
    x_hat = potentials.sample_node_given(s, d, mu[:, :, None, :], eps)
    w_unary = potentials.unary(s, x_hat, feats_s.detach(), stop=True).mean(-1)
    truth_s = truth[:, s] if truth is not None else None
    prev_msgs = prev.messages if prev is not None and prev.messages else None
    w_neigh = neighbor_term(potentials, s, d, mu, prev_msgs, cfg.mode, truth_s)
    return Message(s, d, mu, w_unary * w_neigh, w_unary, w_neigh, frame)


def self_message(potentials: Potentials, d: int, prev: FrameState | None, cfg: InferenceConfig,
                 gen: torch.Generator, batch: int, frame: int = 0) -> Message:
    """Stand-in message for a node without neighbors: its own resampled belief, unit weights.

    The belief update then weights it by the node's unary alone, so an
    isolated node behaves as a particle filter.
    """
    prev_bel = prev.beliefs.get(d) if prev is not None else None
    mu = resample_and_diffuse(prev_bel, cfg.particles, cfg.gamma, cfg.mode, gen,
                              potentials, d, batch=batch)
    ones = torch.ones(mu.shape[:2])
    return Message(d, d, mu, ones, ones, ones, frame)


def belief_update(potentials: Potentials, d: int, incoming: dict[int, Message],
                  features: dict[int, torch.Tensor], frame: int = 0
                  ) -> tuple[Belief, dict[int, Message]]:
    """Reweight each incoming message by the destination unary, normalize, union.

    Returns the belief and the reweighted, per-message normalized messages
    (those are what the next frame's neighbor terms read).
    """
    srcs = potentials.graph.neighbors[d] or (d,)
    missing = [s for s in srcs if s not in incoming]
    if missing:
        raise DataError(f"belief update for node {d} missing messages from {missing}")
    parts, weights, ud, us, ns, updated = [], [], [], [], [], {}
    for s in srcs:
        msg = incoming[s]
        phi = potentials.unary(d, msg.particles, features[d])
        w = msg.weights * phi
        w = w / w.sum(-1, keepdim=True)
        updated[s] = replace(msg, weights=w)
        parts.append(msg.particles)
        weights.append(w)
        ud.append(phi)
        us.append(msg.w_unary)
        ns.append(msg.w_neigh)
    w = torch.cat(weights, 1)
    w = w / w.sum(-1, keepdim=True)
    bel = Belief(d, torch.cat(parts, 1), w, torch.cat(ud, 1), torch.cat(us, 1),
                 torch.cat(ns, 1), tuple(srcs), frame)
    return bel, updated


def encode_all(potentials: Potentials, images: torch.Tensor) -> dict[int, torch.Tensor]:
    """Features for every node, computed once per frame and shared by all particles."""
    return {n: potentials.encode_observation(n, images) for n in potentials.graph.nodes}


def run_frame(potentials: Potentials, images: torch.Tensor, prev: FrameState | None,
              cfg: InferenceConfig, gen: torch.Generator,
              truth: torch.Tensor | None = None) -> FrameState:
    """One synchronous round: all messages, then all beliefs (ascending node order)."""
    graph = potentials.graph
    frame = 0 if prev is None else prev.frame + 1
    features = encode_all(potentials, images)
    msgs: dict[Edge, Message] = {}
    for s, d in graph.directed_edges():
        msgs[(s, d)] = message_update(potentials, s, d, prev, features, cfg, gen, truth, frame)
    for d in graph.nodes:
        if not graph.neighbors[d]:
            msgs[(d, d)] = self_message(potentials, d, prev, cfg, gen, images.shape[0], frame)
    beliefs: dict[int, Belief] = {}
    stored: dict[Edge, Message] = {}
    for d in graph.nodes:
        incoming = {s: msgs[(s, d)] for s in graph.neighbors[d] or (d,)}
        beliefs[d], updated = belief_update(potentials, d, incoming, features, frame)
        for s, m in updated.items():
            stored[(s, d)] = m
    return FrameState(beliefs, stored, frame)


def max_weight_estimate(belief: Belief) -> torch.Tensor:
    """(B, 2) particle with the largest weight; ties go to the lowest index."""
    if belief.size == 0:
        raise DNBPError(f"empty belief for node {belief.node}")
    idx = torch.argmax(belief.weights, dim=-1)
    return belief.particles[torch.arange(idx.shape[0]), idx]


def smc_joint_sample(beliefs: dict[int, Belief], potentials: Potentials | None,
                     n: int, gen: torch.Generator, graph: GraphSpec | None = None
                     ) -> torch.Tensor:
    """N joint samples (B, N, V, 2), built node by node in index order.

    Node k's belief is reweighted by the pairwise densities to the already
    sampled earlier neighbors, then resampled.
    """
    graph = graph or potentials.graph
    first = beliefs[graph.nodes[0]]
    b = first.particles.shape[0]
    out = torch.zeros(b, n, len(graph.nodes), 2)
    with torch.no_grad():
        for k in graph.nodes:
            bel = beliefs[k]
            if bel.size == 0:
                raise DNBPError(f"empty belief for node {k}")
            logw = torch.log(bel.weights)[:, None, :].expand(b, n, bel.size).clone()
            for u in graph.neighbors[k]:
                if u < k and potentials is not None:
                    logw = logw + potentials.density_between(
                        u, k, out[:, :, u, None, :], bel.particles[:, None, :, :], log=True)
            probs = torch.softmax(logw, -1).reshape(b * n, bel.size)
            idx = torch.multinomial(probs, 1, replacement=True, generator=gen).reshape(b, n)
            out[:, :, k] = torch.gather(bel.particles, 1, idx[..., None].expand(-1, -1, 2))
    return out
