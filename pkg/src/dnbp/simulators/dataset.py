"""Sequence simulation, clutter-ratio binning and the on-disk dataset format.

Layout of a split directory::

    metadata.json
    00000/frames/0000.png ...   (8-bit RGB, 128x128)
    00000/labels.json           (task, seed, clutter_kind, clutter_ratio, keypoints, ...)

Every sequence draws from its own generator seeded by (seed, split, index),
so output is identical regardless of worker count.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from dnbp.errors import DataError
from dnbp.simulators import pendulum, spider
from dnbp.simulators.clutter import ClutterItem, gen_clutter, step_clutter
from dnbp.simulators.render import compose, render_layer

SPLITS = ("train", "val", "test")
_SPLIT_CODE = {"train": 0, "val": 1, "test": 2}

TASKS = {
    # sequences per split at scale 1, clutter binomial (n, p), train/val bins
    "pendulum": dict(train=1024, val=150, test_per_decile=50, binomial=(15, 0.3),
                     bins=((0.0, 0.0), (0.0, 0.04), (0.04, 0.1)), n_nodes=3),
    "spider": dict(train=2048, val=300, test_per_decile=50, binomial=(10, 0.5),
                   bins=((0.0, 0.0), (0.0, 0.04), (0.04, 0.1), (0.1, 0.2), (0.2, 0.3)),
                   n_nodes=7),
}
DECILE_WIDTH = 0.095
TEST_DECILES = tuple((round(k * DECILE_WIDTH, 6), round((k + 1) * DECILE_WIDTH, 6))
                     for k in range(10))


@dataclass
class DatasetConfig:
    scale: float = 1.0
    train_frames: int = 20
    test_frames: int = 100
    test_scale: float | None = None   # defaults to scale
    retry_budget: int = 400


@dataclass
class SequenceRecord:
    task: str
    frames: np.ndarray          # (F, 128, 128, 3) uint8
    keypoints: np.ndarray       # (F, V, 2) normalized
    masks: np.ndarray           # (F, 128, 128) bool clutter coverage
    clutter_kind: str           # none | static | dynamic
    seed: list[int] = field(default_factory=list)

    @property
    def frame_ratios(self) -> np.ndarray:
        return self.masks.reshape(len(self.masks), -1).mean(1)

    @property
    def clutter_ratio(self) -> float:
        return clutter_ratio(self.masks)


def clutter_ratio(masks) -> float:
    """Mean over frames of the covered-pixel fraction."""
    masks = np.asarray(masks)
    if masks.size == 0 or len(masks) == 0:
        raise ValueError("clutter_ratio of an empty sequence")
    return float(masks.reshape(len(masks), -1).mean(1).mean())


def in_bin(ratio: float, lo: float, hi: float, rule: str = "upper") -> bool:
    """Bin membership; (0, 0) means exactly zero.

    ``rule`` is "upper" for (lo, hi] (train/val bins), "decile" for [lo, hi)
    and "last" for the closed final decile [lo, hi].
    """
    if lo == hi == 0.0:
        return ratio == 0.0
    if rule == "upper":
        return lo < ratio <= hi
    if rule == "decile":
        return lo <= ratio < hi
    if rule == "last":
        return lo <= ratio <= hi
    raise ValueError(f"unknown bin rule {rule!r}")


# --- structure simulation ------------------------------------------------

def simulate_structure(task: str, n_frames: int, rng: np.random.Generator):
    """States and (F, V, 2) keypoints; spider draws are redrawn until all labels stay in frame."""
    if task == "pendulum":
        s = pendulum.random_pendulum_state(rng)
        states = [s]
        for _ in range(n_frames - 1):
            s = pendulum.pendulum_step(s)
            states.append(s)
        return states, np.stack([pendulum.pendulum_keypoints(s) for s in states])
    if task == "spider":
        for _ in range(1000):
            s = spider.random_spider_state(rng)
            states = [s]
            for _ in range(n_frames - 1):
                s = spider.spider_step(s)
                states.append(s)
            kps = np.stack([spider.spider_keypoints(s) for s in states])
            if np.all(np.abs(kps) <= 1.0):
                return states, kps
        raise DataError("could not draw an in-frame spider trajectory")
    raise DataError(f"unknown task {task!r}")


def render_sequence(task: str, states, items: list[ClutterItem]):
    frames, masks = [], []
    static = all(c.vx == 0 and c.vy == 0 and c.vtheta == 0 for c in items)
    layers = None
    for s in states:
        if layers is None or not static:
            layers = (render_layer([c for c in items if c.layer == "beneath"]),
                      render_layer([c for c in items if c.layer == "above"]))
        img, m = compose(task, s, *layers)
        frames.append(img)
        masks.append(m)
        items = step_clutter(items)
    return np.stack(frames), np.stack(masks)


def _counts(task: str, rng: np.random.Generator, mult: float) -> tuple[int, int]:
    n, p = TASKS[task]["binomial"]
    nb, na = rng.binomial(n, p, size=2)
    return int(round(nb * mult)), int(round(na * mult))


def simulate_in_bin(task: str, n_frames: int, lo: float, hi: float, kind: str,
                    rng: np.random.Generator, budget: int, rule: str = "upper",
                    label: str = "") -> SequenceRecord:
    """Rejection-sample clutter counts until the sequence's ratio lands in the bin.

    Counts start from the task's binomial; a multiplier adapts them between
    attempts using an exponential coverage model. Frame 0 is screened first
    so whole sequences are only simulated for promising draws.
    """
    states, kps = simulate_structure(task, n_frames, rng)
    if lo == hi == 0.0:
        frames, masks = render_sequence(task, states, [])
        return SequenceRecord(task, frames, kps, masks, "none")
    dynamic = kind == "dynamic"
    target = min(0.5 * (lo + hi), 0.99)
    mult = 1.0
    for _ in range(budget):
        nb, na = _counts(task, rng, mult)
        items = gen_clutter(task, nb, na, dynamic, rng)
        r = float(render_layer(items)[1].mean())
        if in_bin(r, lo, hi, rule) or (dynamic and lo / 2 < r <= min(1.0, hi * 1.5)):
            frames, masks = render_sequence(task, states, items)
            r = clutter_ratio(masks)
            if in_bin(r, lo, hi, rule):
                return SequenceRecord(task, frames, kps, masks, kind)
        # exponential coverage model r = 1 - exp(-c n): rescale n toward the target
        if r <= 0.0:
            mult *= 2.0
        else:
            ratio = math.log1p(-target) / math.log1p(-min(r, 0.999))
            mult *= float(np.clip(ratio, 0.5, 4.0)) * float(rng.uniform(0.9, 1.1))
        mult = float(np.clip(mult, 1e-2, 1e3))
    raise DataError(f"could not reach clutter bin {label or (lo, hi)} for {task} "
                    f"within {budget} attempts")


# --- dataset layout ------------------------------------------------------

def scaled_count(scale: float, full: int) -> int:
    """Sequences at a reduced scale: nearest integer, at least one."""
    return max(1, int(math.floor(scale * full + 0.5)))


def _plan(task: str, split: str, cfg: DatasetConfig):
    """List of (bin_index, (lo, hi), kind, bin_rule) per sequence."""
    info = TASKS[task]
    plan = []
    if split in ("train", "val"):
        n = scaled_count(cfg.scale, info[split])
        bins = info["bins"]
        for i in range(n):
            b = i % len(bins)
            lo, hi = bins[b]
            if lo == hi == 0.0:
                kind = "none"
            else:
                kind = "static" if (i // len(bins)) % 2 == 0 else "dynamic"
            plan.append((b, bins[b], kind, "upper"))
    elif split == "test":
        scale = cfg.test_scale if cfg.test_scale is not None else cfg.scale
        per = scaled_count(scale, info["test_per_decile"])
        for k, (lo, hi) in enumerate(TEST_DECILES):
            for j in range(per):
                kind = "static" if j % 2 == 0 else "dynamic"
                plan.append((k, (lo, hi), kind, "last" if k == len(TEST_DECILES) - 1 else "decile"))
    else:
        raise DataError(f"split must be one of {SPLITS}, got {split!r}")
    return plan


def sequence_seed(seed: int, split: str, index: int) -> list[int]:
    return [int(seed), _SPLIT_CODE[split], int(index)]


def build_sequence(task: str, split: str, index: int, seed: int, cfg: DatasetConfig) -> tuple:
    b, (lo, hi), kind, rule = _plan(task, split, cfg)[index]
    ss = sequence_seed(seed, split, index)
    rng = np.random.default_rng(np.random.SeedSequence(ss))
    n_frames = cfg.test_frames if split == "test" else cfg.train_frames
    rec = simulate_in_bin(task, n_frames, lo, hi, kind, rng, cfg.retry_budget, rule,
                          label=f"{'decile' if split == 'test' else 'bin'} {b} [{lo}, {hi}]")
    rec.seed = ss
    return b, rec


def write_sequence(path: Path, rec: SequenceRecord, extra: dict) -> None:
    (path / "frames").mkdir(parents=True, exist_ok=True)
    for t, img in enumerate(rec.frames):
        Image.fromarray(img).save(path / "frames" / f"{t:04d}.png", format="PNG")
    labels = {
        "task": rec.task,
        "seed": rec.seed,
        "clutter_kind": rec.clutter_kind,
        "clutter_ratio": rec.clutter_ratio,
        "frame_clutter_ratios": [float(r) for r in rec.frame_ratios],
        "keypoints": rec.keypoints.tolist(),
        **extra,
    }
    (path / "labels.json").write_text(json.dumps(labels, sort_keys=True))


def _job(args) -> dict:
    task, split, index, seed, cfg_dict, out = args
    cfg = DatasetConfig(**cfg_dict)
    b, rec = build_sequence(task, split, index, seed, cfg)
    key = "decile" if split == "test" else "bin"
    write_sequence(Path(out) / f"{index:05d}", rec, {key: b, "sequence_id": index})
    return {"sequence_id": index, key: b, "clutter_kind": rec.clutter_kind,
            "clutter_ratio": rec.clutter_ratio}


def generate_dataset(task: str, split: str, cfg: DatasetConfig, seed: int, out: str | Path,
                     jobs: int = 1) -> dict:
    """Simulate and write one split; returns the metadata written to metadata.json."""
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    plan = _plan(task, split, cfg)
    args = [(task, split, i, seed, asdict(cfg), str(out)) for i in range(len(plan))]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_job, args))
    else:
        rows = [_job(a) for a in args]
    bins = TEST_DECILES if split == "test" else TASKS[task]["bins"]
    meta = {
        "task": task, "split": split, "seed": seed, "config": asdict(cfg),
        "bins": [list(b) for b in bins],
        "bin_rule": ("deciles [lo, hi), last closed" if split == "test"
                     else "(0,0) means no clutter; other bins (lo, hi]"),
        "n_nodes": TASKS[task]["n_nodes"],
        "sequences": rows,
    }
    (out / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    return meta


# --- loading -------------------------------------------------------------

def load_sequence(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    lab_path = path / "labels.json"
    if not lab_path.is_file():
        raise DataError(f"missing labels.json in {path}")
    labels = json.loads(lab_path.read_text())
    n = len(labels["keypoints"])
    frames = np.stack([np.asarray(Image.open(path / "frames" / f"{t:04d}.png").convert("RGB"))
                       for t in range(n)])
    return frames, labels


class SequenceDataset:
    """Lazy view of a split directory written by :func:`generate_dataset`."""

    def __init__(self, root: str | Path, cache: bool = True):
        self.root = Path(root)
        if not self.root.is_dir():
            raise DataError(f"dataset directory not found: {self.root}")
        meta_path = self.root / "metadata.json"
        self.meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
        self.paths = sorted(p for p in self.root.iterdir() if (p / "labels.json").is_file())
        self._cache: dict[int, tuple[np.ndarray, dict]] | None = {} if cache else None

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, i: int) -> tuple[np.ndarray, dict]:
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        item = load_sequence(self.paths[i])
        if self._cache is not None:
            self._cache[i] = item
        return item

    @property
    def task(self) -> str | None:
        if "task" in self.meta:
            return self.meta["task"]
        return self[0][1]["task"] if len(self) else None

    def n_nodes(self) -> int:
        return len(self[0][1]["keypoints"][0])


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
