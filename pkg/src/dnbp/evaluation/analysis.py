"""Dataset-level evaluation, occlusion/entropy analysis and pairwise inspection."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from dnbp.errors import DataError
from dnbp.evaluation.metrics import (
    ErrorReport, avg_euclidean_error, euclidean_errors_px, to_pixels,
)
from dnbp.graph import NOISE_DIM, Edge, Potentials
from dnbp.simulators import pendulum
from dnbp.simulators.dataset import SequenceDataset
from dnbp.simulators.render import compose, render_layer, structure_mask
from dnbp.tracking import TrackReport, track_batch

CSV_FIELDS = ("task", "sequence_id", "decile", "node_id", "frame", "error_px", "entropy_nats")
# predictor(frames (F, H, W, 3), keypoints (F, V, 2)) -> (estimates (F, V, 2), entropies (F, V))
Predictor = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def uniform_baseline_px(labels, grid: int = 200) -> float:
    """Expected error (px) of a keypoint drawn uniformly from the frame.

    Midpoint quadrature over a grid x grid lattice of the square, averaged over
    all labels (N, ..., 2).
    """
    pts = np.asarray(labels, np.float64).reshape(-1, 2)
    g = (np.arange(grid) + 0.5) / grid * 2 - 1
    lattice = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    total = 0.0
    for start in range(0, len(pts), 256):
        chunk = pts[start:start + 256]
        d = np.linalg.norm(lattice[None] - chunk[:, None], axis=-1).mean(1)
        total += d.sum()
    return float(total / len(pts)) * 64.0


@dataclass
class DatasetEvaluation:
    report: ErrorReport
    csv_text: str
    decile_means: dict[int, float]
    baseline_px: float


def _group_key(labels: dict) -> int:
    return int(labels.get("decile", labels.get("bin", 0)))


def evaluate_dataset(potentials: Potentials | None, ds: SequenceDataset, particles: int = 200,
                     seed: int = 0, out_dir: str | Path | None = None, batch: int = 8,
                     u_samples: int = 10, predictor: Predictor | None = None,
                     max_frames: int | None = None, entropy_samples: int = 2000
                     ) -> DatasetEvaluation:
    """Track every sequence, aggregate errors per decile and keypoint.

    Writes ``errors.csv`` and ``error_vs_clutter.png`` into ``out_dir`` when
    given. A ``predictor`` replaces the model (harness checks, baselines).
    """
    if len(ds) == 0:
        raise DataError(f"no sequences in {ds.root}")
    task = ds.task
    if potentials is not None and ds.n_nodes() != len(potentials.graph.nodes):
        raise DataError(f"checkpoint graph {potentials.graph.name} has "
                        f"{len(potentials.graph.nodes)} nodes, dataset has {ds.n_nodes()}")
    preds, truths, groups, ents, seq_ids = [], [], [], [], []
    for start in range(0, len(ds), batch):
        idx = list(range(start, min(start + batch, len(ds))))
        items = [ds[i] for i in idx]
        n = min(len(f) for f, _ in items)
        if max_frames:
            n = min(n, max_frames)
        kps = [np.asarray(lab["keypoints"], np.float64)[:n] for _, lab in items]
        if predictor is not None:
            outs = [predictor(f[:n], k) for (f, _), k in zip(items, kps)]
        else:
            frames = torch.from_numpy(np.stack([f[:n] for f, _ in items], 1))
            reps = track_batch(potentials, frames, particles, u_samples, seed + start,
                               entropy_samples=entropy_samples)
            outs = [(r.estimates, r.entropies) for r in reps]
        for i, (f, lab), k, (est, ent) in zip(idx, items, kps, outs):
            preds.append(est)
            truths.append(k)
            ents.append(ent)
            groups.append(_group_key(lab))
            seq_ids.append(int(lab.get("sequence_id", i)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    all_pred, all_truth, all_bins = [], [], []
    for sid, g, p, t, e in zip(seq_ids, groups, preds, truths, ents):
        err = euclidean_errors_px(p, t)
        for f in range(err.shape[0]):
            for v in range(err.shape[1]):
                w.writerow((task, sid, g, v, f, f"{err[f, v]:.6f}", f"{e[f, v]:.6f}"))
        all_pred.append(p)
        all_truth.append(t)
        all_bins.append(np.full(len(p), g))
    report = avg_euclidean_error(np.concatenate(all_pred), np.concatenate(all_truth),
                                 np.concatenate(all_bins))
    result = DatasetEvaluation(report, buf.getvalue(), report.bin_means(),
                               uniform_baseline_px(np.concatenate(all_truth)))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "errors.csv").write_text(result.csv_text)
        plot_error_curves(report, out / "error_vs_clutter.png", task or "")
    return result


def plot_error_curves(report: ErrorReport, path: str | Path, title: str = "") -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    bins = sorted({b for b, _ in report.by_bin_node})
    nodes = sorted({v for _, v in report.by_bin_node})
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for v in nodes:
        ax.plot(bins, [report.by_bin_node[(b, v)] for b in bins], marker="o", label=f"node {v}")
    means = report.bin_means()
    ax.plot(bins, [means[b] for b in bins], "k--", label="mean")
    ax.set_xlabel("clutter decile")
    ax.set_ylabel("average error (px)")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


# --- occlusion -------------------------------------------------------------

OCCLUDER_COLOR = (255, 140, 0)


@dataclass
class OccluderSequence:
    frames: np.ndarray        # (F, H, W, 3)
    keypoints: np.ndarray     # (F, V, 2)
    coverage: np.ndarray      # (F,) fraction of structure pixels hidden by the occluder


def occluder_masks(n_frames: int, width_px: int = 40, height_px: int = 60,
                   center_row: float = 64.0, x_start: float = -40.0, x_end: float = 168.0,
                   size: int = 128) -> np.ndarray:
    """Axis-aligned block sweeping left to right; (F, H, W) bool."""
    rows = np.arange(size) + 0.5
    masks = np.zeros((n_frames, size, size), bool)
    for t in range(n_frames):
        cx = x_start + (x_end - x_start) * t / max(n_frames - 1, 1)
        r = np.abs(rows - center_row) <= height_px / 2
        c = np.abs(rows - cx) <= width_px / 2
        masks[t] = r[:, None] & c[None, :]
    return masks


def build_occluder_sequence(n_frames: int = 60, seed: int = 0,
                            masks: np.ndarray | None = None) -> OccluderSequence:
    """Clutter-free pendulum sequence with an occluding block drawn on top."""
    rng = np.random.default_rng(seed)
    s = pendulum.random_pendulum_state(rng)
    masks = occluder_masks(n_frames) if masks is None else masks
    empty = render_layer([])
    frames, kps, cov = [], [], []
    for t in range(n_frames):
        img, _ = compose("pendulum", s, empty, empty)
        occ = masks[t]
        img[occ] = OCCLUDER_COLOR
        sm = structure_mask("pendulum", s)
        frames.append(img)
        kps.append(pendulum.pendulum_keypoints(s))
        cov.append(float((sm & occ).sum() / max(sm.sum(), 1)))
        s = pendulum.pendulum_step(s)
    return OccluderSequence(np.stack(frames), np.stack(kps), np.array(cov))


@dataclass
class EntropyTrace:
    entropies: np.ndarray     # (F, V) nats
    occluded: np.ndarray      # (F,) bool
    coverage: np.ndarray      # (F,)
    estimates: np.ndarray     # (F, V, 2)

    def mean_entropy(self, node: int, occluded: bool) -> float:
        sel = self.occluded if occluded else ~self.occluded
        return float(self.entropies[sel, node].mean()) if sel.any() else math.nan


def occlusion_entropy_report(potentials: Potentials, seq: OccluderSequence,
                             threshold: float = 0.25, particles: int = 200, seed: int = 0
                             ) -> EntropyTrace:
    rep = track_batch(potentials, torch.from_numpy(seq.frames)[:, None], particles, seed=seed)[0]
    return EntropyTrace(rep.entropies, seq.coverage > threshold, seq.coverage, rep.estimates)


# --- pairwise inspection -----------------------------------------------------

@dataclass
class PairwiseInspection:
    edge: Edge
    train_hist: np.ndarray      # (bins, bins) normalized, rows = y
    sampler_hist: np.ndarray    # (bins, bins) normalized
    density_grid: np.ndarray    # (grid, grid) density values, rows = y
    extent: float
    train_modal_radius: float
    grid_modal_radius: float
    tv_distance: float

    @property
    def sampler_matches(self) -> bool:
        return self.tv_distance < 0.5

    def save(self, out_dir: str | Path) -> None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tag = f"{self.edge[0]}-{self.edge[1]}"
        np.savez(out / f"pairwise_{tag}.npz", train_hist=self.train_hist,
                 sampler_hist=self.sampler_hist, density_grid=self.density_grid,
                 extent=self.extent, tv_distance=self.tv_distance,
                 train_modal_radius=self.train_modal_radius,
                 grid_modal_radius=self.grid_modal_radius)
        ext = [-self.extent, self.extent, self.extent, -self.extent]
        for name, arr in (("train_hist", self.train_hist), ("sampler_hist", self.sampler_hist),
                          ("density_grid", self.density_grid)):
            fig, ax = plt.subplots(figsize=(3, 3))
            ax.imshow(arr, extent=ext, cmap="viridis")
            ax.set_title(f"{name} {tag}", fontsize=8)
            fig.tight_layout()
            fig.savefig(out / f"{name}_{tag}.png", metadata={"Software": None})
            plt.close(fig)


def hist2d(points: np.ndarray, bins: int, extent: float) -> np.ndarray:
    h, _, _ = np.histogram2d(points[:, 1], points[:, 0], bins=bins,
                             range=[[-extent, extent], [-extent, extent]])
    total = h.sum()
    return h / total if total > 0 else h


def training_translations(ds: SequenceDataset, edge: Edge) -> np.ndarray:
    a, b = edge
    out = []
    for i in range(len(ds)):
        kp = np.asarray(ds[i][1]["keypoints"], np.float64)
        out.append(kp[:, a] - kp[:, b])
    return np.concatenate(out)


def inspect_pairwise(potentials: Potentials, edge: Edge, train_ds: SequenceDataset,
                     n_samples: int = 100_000, grid: int = 100, bins: int = 40,
                     extent: float = 1.0, seed: int = 0) -> PairwiseInspection:
    """Compare training translations x_a - x_b with the learned sampler and density."""
    if edge not in potentials.graph.edges:
        raise DataError(f"edge {edge} not in graph {potentials.graph.name}")
    deltas = training_translations(train_ds, edge)
    train_h = hist2d(deltas, bins, extent)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        eps = torch.randn(n_samples, NOISE_DIM, generator=gen)
        samples = potentials.pairwise_translation(edge, eps).double().numpy()
        c = (np.arange(grid) + 0.5) / grid * 2 * extent - extent
        gx, gy = np.meshgrid(c, c)
        pts = torch.from_numpy(np.stack([gx, gy], -1).reshape(-1, 2)).float()
        dens = potentials.pairwise_density(edge, pts).reshape(grid, grid).double().numpy()
    samp_h = hist2d(samples, bins, extent)
    radii = np.hypot(deltas[:, 0], deltas[:, 1])
    counts, redges = np.histogram(radii, bins=50, range=(0, extent))
    k = int(np.argmax(counts))
    train_r = float(0.5 * (redges[k] + redges[k + 1]))
    iy, ix = np.unravel_index(int(np.argmax(dens)), dens.shape)
    grid_r = float(np.hypot(c[ix], c[iy]))
    return PairwiseInspection(edge, train_h, samp_h, dens, extent, train_r, grid_r,
                              float(0.5 * np.abs(train_h - samp_h).sum()))


def center_predictor(frames: np.ndarray, keypoints: np.ndarray):
    """Predicts every keypoint at the image center."""
    est = np.zeros_like(keypoints)
    return est, np.zeros(keypoints.shape[:2])


def oracle_predictor(frames: np.ndarray, keypoints: np.ndarray):
    return np.array(keypoints, copy=True), np.zeros(keypoints.shape[:2])


__all__ = ["evaluate_dataset", "uniform_baseline_px", "occlusion_entropy_report",
           "build_occluder_sequence", "occluder_masks", "inspect_pairwise", "PairwiseInspection",
           "EntropyTrace", "DatasetEvaluation", "center_predictor", "oracle_predictor",
           "to_pixels"]
