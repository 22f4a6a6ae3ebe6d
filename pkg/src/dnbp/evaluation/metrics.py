"""Tracking error and belief-uncertainty metrics."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import torch

from dnbp.errors import DNBPError

IMAGE_PX = 128
ENTROPY_BINS = 40
ENTROPY_RESAMPLE = 2000
MAX_ENTROPY = math.log(ENTROPY_BINS * ENTROPY_BINS)


def to_pixels(x) -> np.ndarray:
    """Normalized [-1, 1] coordinates -> pixel units of a 128x128 frame."""
    return (np.asarray(x, dtype=np.float64) + 1.0) * IMAGE_PX / 2.0


def euclidean_errors_px(pred, truth) -> np.ndarray:
    """Per-pair distances in pixels; inputs (..., 2) in normalized coordinates."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DNBPError(f"prediction shape {pred.shape} != label shape {truth.shape}")
    return np.linalg.norm(to_pixels(pred) - to_pixels(truth), axis=-1)


@dataclass
class ErrorReport:
    """Mean Euclidean error (px) overall and per (bin, keypoint)."""
    mean: float
    count: int
    by_bin_node: dict[tuple[int, int], float] = field(default_factory=dict)
    counts: dict[tuple[int, int], int] = field(default_factory=dict)

    def bin_means(self) -> dict[int, float]:
        """Per-bin mean over all keypoints, weighted by counts."""
        tot, cnt = defaultdict(float), defaultdict(int)
        for (b, _), m in self.by_bin_node.items():
            tot[b] += m * self.counts[(b, _)]
            cnt[b] += self.counts[(b, _)]
        return {b: tot[b] / cnt[b] for b in sorted(tot)}


def avg_euclidean_error(pred, truth, bins=None) -> ErrorReport:
    """Average of all pairwise distances.

    ``pred``/``truth`` are (N, V, 2) or (N, 2); ``bins`` optionally assigns
    each of the N rows to a clutter bin for the grouped breakdown.
    """
    err = euclidean_errors_px(pred, truth)
    if err.size == 0:
        raise DNBPError("no prediction/label pairs")
    if err.ndim == 1:
        err = err[:, None]
    rep = ErrorReport(float(err.mean()), int(err.size))
    bins = np.zeros(err.shape[0], int) if bins is None else np.asarray(bins)
    if len(bins) != err.shape[0]:
        raise DNBPError("bins length does not match predictions")
    for b in np.unique(bins):
        rows = err[bins == b]
        for v in range(err.shape[1]):
            rep.by_bin_node[(int(b), v)] = float(rows[:, v].mean())
            rep.counts[(int(b), v)] = int(rows.shape[0])
    return rep


def histogram_entropy(points, bins: int = ENTROPY_BINS) -> float:
    """Shannon entropy (nats) of the bins x bins histogram of points over [-1, 1]^2.

    Points outside the frame fall into the nearest border bin.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise DNBPError("entropy of an empty particle set")
    ij = np.clip(np.floor((pts + 1.0) / 2.0 * bins), 0, bins - 1).astype(int)
    counts = np.bincount(ij[:, 0] * bins + ij[:, 1], minlength=bins * bins).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def marginal_entropy(particles: torch.Tensor, weights: torch.Tensor,
                     gen: torch.Generator | None = None, n: int = ENTROPY_RESAMPLE) -> float:
    """Resample a weighted belief (T, 2)/(T,) to n unweighted particles, then histogram entropy."""
    if particles.shape[0] == 0:
        raise DNBPError("entropy of an empty belief")
    w = weights.detach().double().clamp_min(0)
    if not w.sum() > 0:
        raise DNBPError("belief has no positive weight")
    idx = torch.multinomial(w, n, replacement=True, generator=gen)
    return histogram_entropy(particles.detach()[idx].numpy())
