"""Desk-scale pendulum pipeline shared by the acceptance suite and scripts.

Artifacts live under one root directory and are reused when a stamp file
records the same configuration, so the half-hour training run happens once.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

from dnbp.simulators.dataset import DatasetConfig, SequenceDataset, generate_dataset
from dnbp.training import TrainConfig, train


@dataclass(frozen=True)
class ScaledRun:
    task: str = "pendulum"
    scale: float = 0.1
    test_scale: float = 0.2
    train_frames: int = 20
    test_frames: int = 40
    data_seed: int = 1
    particles: int = 50
    lr: float = 2e-3
    max_epochs: int = 50
    patience: int = 15
    max_minutes: float = 29.0
    train_seed: int = 0

    def dataset_config(self) -> DatasetConfig:
        return DatasetConfig(scale=self.scale, train_frames=self.train_frames,
                             test_frames=self.test_frames, test_scale=self.test_scale)

    def train_config(self) -> TrainConfig:
        return TrainConfig(task=self.task, particles=self.particles, lr=self.lr,
                           max_epochs=self.max_epochs, patience=self.patience,
                           max_minutes=self.max_minutes, seed=self.train_seed)

    def digest(self, *fields: str) -> str:
        d = dataclasses.asdict(self)
        blob = json.dumps({k: d[k] for k in (fields or d)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


DATA_FIELDS = ("task", "scale", "test_scale", "train_frames", "test_frames", "data_seed")


def _stamp_ok(path: Path, digest: str) -> bool:
    return path.is_file() and json.loads(path.read_text()).get("digest") == digest


def ensure_data(run: ScaledRun, root: str | Path, jobs: int = 1) -> Path:
    """Generate train/val/test splits under root/data-<digest> unless already there."""
    digest = run.digest(*DATA_FIELDS)
    out = Path(root) / f"data-{digest}"
    stamp = out / "stamp.json"
    if _stamp_ok(stamp, digest):
        return out
    started = time.monotonic()
    for split in ("train", "val", "test"):
        generate_dataset(run.task, split, run.dataset_config(), run.data_seed, out / split, jobs)
    stamp.write_text(json.dumps({"digest": digest, "seconds": time.monotonic() - started}))
    return out


def ensure_checkpoint(run: ScaledRun, root: str | Path, progress=None) -> tuple[Path, dict]:
    """Train once per configuration; returns the checkpoint path and the run summary."""
    data = ensure_data(run, root)
    digest = run.digest()
    ck = Path(root) / f"model-{digest}.bin"
    stamp = Path(root) / f"model-{digest}.json"
    if ck.is_file() and _stamp_ok(stamp, digest):
        return ck, json.loads(stamp.read_text())
    started = time.monotonic()
    _, info = train(SequenceDataset(data / "train"), SequenceDataset(data / "val"),
                    run.train_config(), out=ck, progress=progress)
    summary = {"digest": digest, "minutes": (time.monotonic() - started) / 60,
               "best_epoch": info["best_epoch"], "best_val_loss": info["best_val_loss"],
               "epochs": len(info["history"]), "history": info["history"]}
    stamp.write_text(json.dumps(summary, indent=1))
    return ck, summary
