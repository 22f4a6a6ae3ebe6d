"""Run trained potentials over image sequences and record per-frame results.

TrackReport files are JSON Lines: a header record followed by one record per
frame with, for every node, the max-weight estimate, the marginal entropy in
nats and (optionally) the full weighted particle list.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from dnbp.beliefprop import FrameState, InferenceConfig, max_weight_estimate, run_frame
from dnbp.evaluation.metrics import ENTROPY_RESAMPLE, marginal_entropy
from dnbp.graph import Potentials


@dataclass
class TrackReport:
    graph: str
    particles: int
    seed: int
    estimates: np.ndarray                 # (F, V, 2)
    entropies: np.ndarray                 # (F, V) nats
    beliefs: list | None = field(default=None, repr=False)  # per frame: per node (particles, weights)

    @property
    def n_frames(self) -> int:
        return self.estimates.shape[0]

    def to_jsonl(self, path: str | Path) -> None:
        lines = [json.dumps({"graph": self.graph, "particles": self.particles, "seed": self.seed,
                             "frames": self.n_frames, "entropy_unit": "nats"}, sort_keys=True)]
        for t in range(self.n_frames):
            rec = {"frame": t, "nodes": []}
            for v in range(self.estimates.shape[1]):
                node = {"node": v, "estimate": self.estimates[t, v].tolist(),
                        "entropy_nats": float(self.entropies[t, v])}
                if self.beliefs is not None:
                    p, w = self.beliefs[t][v]
                    node["particles"] = np.asarray(p).tolist()
                    node["weights"] = np.asarray(w).tolist()
                rec["nodes"].append(node)
            lines.append(json.dumps(rec, sort_keys=True))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "TrackReport":
        lines = Path(path).read_text().splitlines()
        head = json.loads(lines[0])
        recs = [json.loads(x) for x in lines[1:]]
        est = np.array([[n["estimate"] for n in r["nodes"]] for r in recs])
        ent = np.array([[n["entropy_nats"] for n in r["nodes"]] for r in recs])
        beliefs = None
        if recs and "particles" in recs[0]["nodes"][0]:
            beliefs = [[(np.array(n["particles"]), np.array(n["weights"])) for n in r["nodes"]]
                       for r in recs]
        return cls(head["graph"], head["particles"], head["seed"], est, ent, beliefs)


def track_batch(potentials: Potentials, frames: torch.Tensor, particles: int = 200,
                u_samples: int = 10, seed: int = 0, keep_beliefs: bool = False,
                entropy_samples: int = ENTROPY_RESAMPLE, on_frame=None) -> list[TrackReport]:
    """Eval-mode tracking of B sequences in lockstep; frames (F, B, H, W, 3) uint8.

    ``on_frame(t, state)`` is called after every frame, e.g. for joint sampling.
    """
    graph = potentials.graph
    cfg = InferenceConfig(particles, u_samples, 0.0, "eval")
    gen = torch.Generator().manual_seed(seed)
    ent_gen = torch.Generator().manual_seed(seed + 1)
    f, b = frames.shape[:2]
    v = len(graph.nodes)
    est = np.zeros((b, f, v, 2))
    ent = np.zeros((b, f, v))
    kept = [[] for _ in range(b)] if keep_beliefs else None
    state: FrameState | None = None
    with torch.no_grad():
        for t in range(f):
            state = run_frame(potentials, frames[t].float(), state, cfg, gen)
            for d in graph.nodes:
                bel = state.beliefs[d]
                est[:, t, d] = max_weight_estimate(bel).numpy()
                for i in range(b):
                    ent[i, t, d] = marginal_entropy(bel.particles[i], bel.weights[i], ent_gen,
                                                    entropy_samples)
            if keep_beliefs:
                for i in range(b):
                    kept[i].append([(state.beliefs[d].particles[i].numpy().copy(),
                                     state.beliefs[d].weights[i].numpy().copy())
                                    for d in graph.nodes])
            if on_frame is not None:
                on_frame(t, state)
    return [TrackReport(graph.name, particles, seed, est[i], ent[i],
                        kept[i] if keep_beliefs else None) for i in range(b)]


def track_sequence(potentials: Potentials, frames: np.ndarray, particles: int = 200,
                   u_samples: int = 10, seed: int = 0, keep_beliefs: bool = False,
                   entropy_samples: int = ENTROPY_RESAMPLE) -> TrackReport:
    """Track one sequence; frames (F, H, W, 3) uint8."""
    x = torch.from_numpy(np.asarray(frames))[:, None]
    return track_batch(potentials, x, particles, u_samples, seed, keep_beliefs,
                       entropy_samples)[0]
