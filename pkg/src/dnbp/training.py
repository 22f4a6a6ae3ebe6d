"""Maximum-likelihood training of the potentials with partial-belief losses.

For each node the belief's particles are used as centers of three Gaussian
kernel mixtures, one per component-weight family (destination unary, sender
unary via the pairwise sampler, neighbor term via the pairwise density). The
per-node loss is the negative log of their product at the ground truth, so the
log splits into three terms and each family's gradient flows through its own
term only.
"""
from __future__ import annotations

import copy
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from dnbp.beliefprop import Belief, FrameState, InferenceConfig, run_frame
from dnbp.diffcore import AdamState, adam_step, check_finite, log_gaussian_density, save_checkpoint
from dnbp.errors import ConfigError, DataError, NumericError
from dnbp.graph import GraphSpec, Potentials, get_graph
from dnbp.simulators.dataset import SequenceDataset

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    task: str = "pendulum"
    particles: int = 100
    eval_particles: int = 200
    gamma: float = 0.9
    u_samples: int = 10
    kernel_sigma: float = 0.05
    lr: float = 1e-3
    batch: int = 6
    noise_sigma: float = 20.0
    max_epochs: int = 100
    patience: int = 5
    clip_norm: float = 10.0
    max_minutes: float = 0.0    # wall-clock budget, 0 disables
    seed: int = 0

    def __post_init__(self):
        positive = ("particles", "eval_particles", "u_samples", "kernel_sigma", "batch",
                    "max_epochs", "patience", "clip_norm")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.particles < 2:
            raise ConfigError("particles must be at least 2")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.lr < 0 or self.noise_sigma < 0 or self.max_minutes < 0:
            raise ConfigError("lr, noise_sigma and max_minutes must be non-negative")

    def inference(self, mode: str = "train") -> InferenceConfig:
        m = self.particles if mode == "train" else self.eval_particles
        return InferenceConfig(m, self.u_samples, self.gamma, mode)


@dataclass
class NodeLoss:
    node: int
    log_unary_d: torch.Tensor     # (B,) log partial belief at the truth
    log_unary_rho: torch.Tensor
    log_neigh_rho: torch.Tensor

    @property
    def loss(self) -> torch.Tensor:
        return -(self.log_unary_d + self.log_unary_rho + self.log_neigh_rho)


@dataclass
class LossBreakdown:
    nodes: dict[int, NodeLoss] = field(default_factory=dict)

    @property
    def total(self) -> torch.Tensor:
        return sum(n.loss.sum() for n in self.nodes.values())

    def per_node(self) -> dict[int, float]:
        return {d: float(n.loss.detach().mean()) for d, n in self.nodes.items()}


def _log_mixture(weights: torch.Tensor, log_kernel: torch.Tensor) -> torch.Tensor:
    """log sum_i (w_i / sum w) * k_i, rows over the last axis."""
    logw = torch.log(weights)
    logw = logw - torch.logsumexp(logw, -1, keepdim=True)
    return torch.logsumexp(logw + log_kernel, -1)


def partial_belief_loss(belief: Belief, truth: torch.Tensor, sigma: float,
                        detach_particles: bool = False) -> NodeLoss:
    """Three Gaussian-kernel partial beliefs at ``truth`` (B, 2)."""
    mu = belief.particles.detach() if detach_particles else belief.particles
    log_k = log_gaussian_density(truth[:, None, :], mu, sigma)
    return NodeLoss(belief.node,
                    _log_mixture(belief.unary_d, log_k),
                    _log_mixture(belief.unary_s, log_k),
                    _log_mixture(belief.neigh_s, log_k))


def frame_loss(state: FrameState, truth: torch.Tensor, sigma: float,
               detach_particles: bool = False) -> LossBreakdown:
    return LossBreakdown({d: partial_belief_loss(b, truth[:, d], sigma, detach_particles)
                          for d, b in state.beliefs.items()})


def augment(images: torch.Tensor, noise_sigma: float, gen: torch.Generator) -> torch.Tensor:
    """Additive Gaussian pixel noise on the 0-255 scale (inputs only)."""
    images = images.float()
    if noise_sigma > 0:
        images = images + noise_sigma * torch.randn(images.shape, generator=gen)
    return images


def named_params(potentials: Potentials) -> dict[str, torch.nn.Parameter]:
    return dict(potentials.named_parameters())


def train_step(potentials: Potentials, images: torch.Tensor, truth: torch.Tensor,
               prev: FrameState | None, cfg: TrainConfig, opt: AdamState,
               gen: torch.Generator) -> tuple[FrameState, LossBreakdown | None]:
    """One frame for a batch of sequences: messages, beliefs, loss, one Adam step.

    Returns the detached state for the next frame and the loss breakdown
    (None when the loss was non-finite and the step was skipped).
    """
    x = augment(images, cfg.noise_sigma, gen)
    state = run_frame(potentials, x, prev, cfg.inference("train"), gen, truth)
    losses = frame_loss(state, truth, cfg.kernel_sigma)
    total = losses.total
    params = named_params(potentials)
    if not torch.isfinite(total):
        log.warning("non-finite loss at frame %d; batch skipped", state.frame)
        return state.detach(), None
    grads = torch.autograd.grad(total, list(params.values()), allow_unused=True)
    grads = {k: (torch.zeros_like(p) if g is None else g)
             for (k, p), g in zip(params.items(), grads)}
    try:
        adam_step(params, grads, opt, clip_norm=cfg.clip_norm)
    except NumericError as exc:
        log.warning("%s; batch skipped", exc)
        return state.detach(), None
    return state.detach(), losses


# --- dataset-level loop --------------------------------------------------

def _batch_arrays(ds: SequenceDataset, idx: list[int]) -> tuple[torch.Tensor, torch.Tensor]:
    frames, kps = [], []
    n_frames = None
    for i in idx:
        f, lab = ds[i]
        n_frames = len(f) if n_frames is None else min(n_frames, len(f))
        frames.append(f)
        kps.append(np.asarray(lab["keypoints"], np.float32))
    frames = np.stack([f[:n_frames] for f in frames], 1)   # (F, B, H, W, 3)
    kps = np.stack([k[:n_frames] for k in kps], 1)          # (F, B, V, 2)
    return torch.from_numpy(frames), torch.from_numpy(kps)


def check_dataset(ds: SequenceDataset, graph: GraphSpec) -> None:
    if len(ds) == 0:
        raise DataError(f"dataset {ds.root} is empty")
    if ds.n_nodes() != len(graph.nodes):
        raise DataError(f"dataset {ds.root} has {ds.n_nodes()} keypoints per frame but graph "
                        f"{graph.name} has {len(graph.nodes)} nodes")


def validation_loss(potentials: Potentials, ds: SequenceDataset, cfg: TrainConfig) -> float:
    """Mean per-node loss over all validation frames (train-mode inference, no noise)."""
    gen = torch.Generator().manual_seed(cfg.seed + 7919)
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(ds), cfg.batch):
            frames, kps = _batch_arrays(ds, list(range(start, min(start + cfg.batch, len(ds)))))
            state = None
            for t in range(frames.shape[0]):
                state = run_frame(potentials, frames[t].float(), state, cfg.inference("train"),
                                  gen, kps[t])
                losses = frame_loss(state, kps[t], cfg.kernel_sigma)
                for nl in losses.nodes.values():
                    total += float(nl.loss.sum())
                    count += nl.loss.numel()
    return total / max(count, 1)


def checkpoint_meta(potentials: Potentials, cfg: TrainConfig, **extra) -> dict:
    return {"config": dataclasses.asdict(cfg), "graph_text": potentials.graph.to_text(), **extra}


def train(train_ds: SequenceDataset, val_ds: SequenceDataset | None, cfg: TrainConfig,
          out: str | Path | None = None, graph: GraphSpec | None = None,
          progress=None) -> tuple[Potentials, dict]:
    """Train until validation loss stops improving; returns best potentials and history."""
    graph = graph or get_graph(cfg.task)
    check_dataset(train_ds, graph)
    if val_ds is not None:
        check_dataset(val_ds, graph)
    torch.manual_seed(cfg.seed)
    potentials = Potentials(graph)
    opt = AdamState(lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    order_rng = np.random.default_rng(cfg.seed)
    best = (math.inf, copy.deepcopy(potentials.state_dict()), -1)
    history: list[dict] = []
    stale = 0
    started = time.monotonic()
    out_of_time = False
    for epoch in range(cfg.max_epochs):
        order = order_rng.permutation(len(train_ds)).tolist()
        epoch_losses = []
        for start in range(0, len(order), cfg.batch):
            frames, kps = _batch_arrays(train_ds, order[start:start + cfg.batch])
            state = None
            for t in range(frames.shape[0]):
                state, losses = train_step(potentials, frames[t], kps[t], state, cfg, opt, gen)
                if losses is not None:
                    epoch_losses.append(float(losses.total.detach()) / (kps.shape[1] * kps.shape[2]))
            if cfg.max_minutes and time.monotonic() - started > 60 * cfg.max_minutes:
                out_of_time = True
                break
        val = validation_loss(potentials, val_ds, cfg) if val_ds is not None else float(
            np.mean(epoch_losses[-50:]) if epoch_losses else math.inf)
        row = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)) if epoch_losses
               else math.nan, "val_loss": val, "minutes": (time.monotonic() - started) / 60}
        history.append(row)
        if progress is not None:
            progress(row)
        log.info("epoch %d train %.4f val %.4f", epoch, row["train_loss"], val)
        if val < best[0]:
            best = (val, copy.deepcopy(potentials.state_dict()), epoch)
            stale = 0
        else:
            stale += 1
        if stale >= cfg.patience or out_of_time:
            break
    potentials.load_state_dict(best[1])
    result = {"best_epoch": best[2], "best_val_loss": best[0], "history": history}
    if out is not None:
        save_checkpoint(out, graph.name, named_params(potentials),
                        checkpoint_meta(potentials, cfg, best_epoch=best[2],
                                        best_val_loss=best[0]))
    return potentials, result


def load_potentials(path: str | Path) -> tuple[Potentials, dict]:
    """Rebuild potentials from a checkpoint; returns (potentials, header)."""
    from dnbp.diffcore import load_checkpoint
    from dnbp.graph import parse_graph

    header, params = load_checkpoint(path)
    meta = header.get("meta", {})
    graph = parse_graph(meta["graph_text"]) if "graph_text" in meta else get_graph(header["graph"])
    potentials = Potentials(graph)
    expected = [[k, list(p.shape)] for k, p in potentials.named_parameters()]
    if expected != header["params"]:
        raise DataError(f"checkpoint parameters do not match graph {graph.name}")
    with torch.no_grad():
        for k, p in potentials.named_parameters():
            p.copy_(params[k])
    return potentials, header
