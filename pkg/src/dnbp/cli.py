"""Command-line entry point: generate / train / track / eval / inspect.

Every option can also come from a flat ``key = value`` config file passed with
``--config``; flags given on the command line win over the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path


from dnbp.errors import ConfigError, DataError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# key -> (type, default, help); shared by the parser, the config file and --help
KEYS: dict[str, tuple[type, object, str]] = {
    "task": (str, "pendulum", "pendulum | spider"),
    "graph": (str, None, "graph file overriding the task's built-in graph"),
    "data": (str, None, "dataset directory (a split, or a root holding train/ and val/)"),
    "val": (str, None, "validation split directory (train)"),
    "checkpoint": (str, None, "checkpoint file to read (track/eval/inspect)"),
    "out": (str, None, "output path"),
    "split": (str, "train", "train | val | test | all (generate)"),
    "scale": (float, None, "shrinks dataset sizes (generate) and the epoch cap (train)"),
    "train_frames": (int, 20, "frames per train/val sequence (generate)"),
    "test_frames": (int, 100, "frames per test sequence (generate)"),
    "sequence": (int, None, "sequence index to track within --data (track)"),
    "particles": (int, None, "particles per belief (train default 100, test default 200)"),
    "gamma": (float, 0.9, "fraction of message candidates drawn from the previous belief"),
    "u_samples": (int, 10, "pairwise samples per candidate for the unary estimate"),
    "kernel_sigma": (float, 0.05, "Gaussian kernel width of the partial-belief loss"),
    "lr": (float, 1e-3, "Adam learning rate"),
    "batch": (int, 6, "sequences per training batch"),
    "noise_sigma": (float, 20.0, "std of additive pixel noise during training"),
    "max_epochs": (int, 100, "epoch cap before --scale is applied"),
    "patience": (int, 5, "epochs without validation improvement before stopping"),
    "max_minutes": (float, 0.0, "wall-clock training budget, 0 disables"),
    "edge": (str, "0-1", "edge a-b to inspect"),
    "samples": (int, 100000, "sampler draws for inspect"),
    "max_frames": (int, None, "truncate evaluated sequences"),
    "seed": (int, 0, "random seed"),
    "jobs": (int, None, "worker processes (default: all cores for generate/eval)"),
}

COMMAND_KEYS = {
    "generate": ("task", "split", "scale", "train_frames", "test_frames", "out", "seed", "jobs"),
    "train": ("task", "graph", "data", "val", "out", "scale", "particles", "gamma", "u_samples",
              "kernel_sigma", "lr", "batch", "noise_sigma", "max_epochs", "patience",
              "max_minutes", "seed"),
    "track": ("checkpoint", "data", "sequence", "out", "particles", "u_samples", "gamma", "seed"),
    "eval": ("checkpoint", "data", "out", "particles", "u_samples", "gamma", "max_frames", "seed",
             "jobs"),
    "inspect": ("checkpoint", "data", "edge", "samples", "out", "seed"),
}
REQUIRED = {
    "generate": ("out",),
    "train": ("data", "out"),
    "track": ("checkpoint", "data", "out"),
    "eval": ("checkpoint", "data", "out"),
    "inspect": ("checkpoint", "data", "out"),
}


class UsageError(Exception):
    pass


def parse_config_file(path: str | Path) -> dict[str, object]:
    """Flat ``key = value`` lines; ``#`` comments; unknown keys rejected."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    out: dict[str, object] = {}
    for no, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{no}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"{p}:{no}: unknown key {key!r}")
        typ = KEYS[key][0]
        try:
            out[key] = typ(value)
        except ValueError:
            raise ConfigError(f"{p}:{no}: {key} expects {typ.__name__}, got {value!r}") from None
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    keys_help = "\n".join(f"  {k:<14} {h}" for k, (_, _, h) in KEYS.items())
    parser = _Parser(prog="dnbp", formatter_class=argparse.RawDescriptionHelpFormatter,
                     description="Differentiable nonparametric belief propagation.",
                     epilog=f"config keys (flags use dashes, config files underscores):\n{keys_help}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    parser.subcommands = {}
    for cmd, keys in COMMAND_KEYS.items():
        sp = sub.add_parser(cmd, formatter_class=argparse.RawDescriptionHelpFormatter,
                            epilog=f"config keys:\n{keys_help}")
        sp.add_argument("--config", help="flat key = value file")
        sp.add_argument("-v", "--verbose", action="store_true")
        for key in keys:
            typ, _, helptext = KEYS[key]
            sp.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None,
                            help=helptext)
        parser.subcommands[cmd] = sp
    return parser


def resolve(args: argparse.Namespace) -> dict[str, object]:
    """Defaults < config file < command-line flags."""
    allowed = COMMAND_KEYS[args.command]
    values = {k: KEYS[k][1] for k in allowed}
    if args.config:
        for k, v in parse_config_file(args.config).items():
            if k not in allowed:
                raise ConfigError(f"{args.config}: key {k!r} does not apply to {args.command}")
            values[k] = v
    for k in allowed:
        v = getattr(args, k)
        if v is not None:
            values[k] = v
    for k in REQUIRED[args.command]:
        if values.get(k) is None:
            raise UsageError(f"dnbp {args.command}: --{k.replace('_', '-')} is required")
    return values


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


# --- subcommands -------------------------------------------------------------

def cmd_generate(c: dict) -> None:
    from dnbp.simulators.dataset import DatasetConfig, SPLITS, TASKS, default_jobs, generate_dataset

    if c["task"] not in TASKS:
        raise UsageError(f"unknown task {c['task']!r}")
    splits = SPLITS if c["split"] == "all" else (c["split"],)
    if splits[0] not in SPLITS:
        raise UsageError(f"unknown split {c['split']!r}")
    cfg = DatasetConfig(scale=1.0 if c["scale"] is None else c["scale"],
                        train_frames=c["train_frames"], test_frames=c["test_frames"])
    jobs = c["jobs"] or default_jobs()
    out = Path(c["out"])
    for split in splits:
        dest = out / split if len(splits) > 1 else out
        meta = generate_dataset(c["task"], split, cfg, c["seed"], dest, jobs)
        print(f"{split}: {len(meta['sequences'])} sequences -> {dest}")


def _split_dirs(data: Path, val: str | None) -> tuple[Path, Path | None]:
    if (data / "train").is_dir():
        return data / "train", Path(val) if val else (data / "val" if (data / "val").is_dir() else None)
    return data, _existing(val, "validation data") if val else None


def cmd_train(c: dict) -> None:
    from dnbp.graph import get_graph
    from dnbp.simulators.dataset import SequenceDataset
    from dnbp.training import TrainConfig, train

    train_dir, val_dir = _split_dirs(_existing(c["data"], "training data"), c["val"])
    epochs = c["max_epochs"]
    if c["scale"] is not None:
        epochs = max(1, math.ceil(c["scale"] * epochs))
    cfg = TrainConfig(task=c["task"], particles=c["particles"] or 100, gamma=c["gamma"],
                      u_samples=c["u_samples"], kernel_sigma=c["kernel_sigma"], lr=c["lr"],
                      batch=c["batch"], noise_sigma=c["noise_sigma"], max_epochs=epochs,
                      patience=c["patience"], max_minutes=c["max_minutes"], seed=c["seed"])
    graph = get_graph(c["graph"] or c["task"])
    train_ds = SequenceDataset(train_dir)
    val_ds = SequenceDataset(val_dir) if val_dir else None
    _, info = train(train_ds, val_ds, cfg, out=c["out"], graph=graph,
                    progress=lambda row: print(json.dumps(row, sort_keys=True), flush=True))
    print(f"best epoch {info['best_epoch']} val loss {info['best_val_loss']:.4f} -> {c['out']}")


def cmd_track(c: dict) -> None:
    from dnbp.simulators.dataset import SequenceDataset, load_sequence
    from dnbp.tracking import track_sequence
    from dnbp.training import load_potentials

    pot, _ = load_potentials(_existing(c["checkpoint"], "checkpoint"))
    data = _existing(c["data"], "sequence")
    if (data / "labels.json").is_file():
        frames, _ = load_sequence(data)
    else:
        ds = SequenceDataset(data)
        idx = c["sequence"] or 0
        if not 0 <= idx < len(ds):
            raise DataError(f"sequence {idx} out of range for {len(ds)} sequences in {data}")
        frames, _ = ds[idx]
    report = track_sequence(pot, frames, particles=c["particles"] or 200,
                            u_samples=c["u_samples"], seed=c["seed"])
    out = Path(c["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_jsonl(out)
    print(f"{report.estimates.shape[0]} frames x {report.estimates.shape[1]} nodes -> {out}")


def cmd_eval(c: dict) -> None:
    from dnbp.evaluation.analysis import evaluate_dataset
    from dnbp.simulators.dataset import SequenceDataset, default_jobs
    from dnbp.training import load_potentials

    import torch

    pot, _ = load_potentials(_existing(c["checkpoint"], "checkpoint"))
    ds = SequenceDataset(_existing(c["data"], "test data"))
    # sequences are tracked in lockstep batches; jobs sets the intra-op thread count
    torch.set_num_threads(c["jobs"] or default_jobs())
    res = evaluate_dataset(pot, ds, particles=c["particles"] or 200, seed=c["seed"],
                           out_dir=c["out"], u_samples=c["u_samples"],
                           max_frames=c["max_frames"])
    for b, m in res.decile_means.items():
        print(f"decile {b}: {m:.2f} px")
    print(f"mean {res.report.mean:.2f} px (uniform baseline {res.baseline_px:.2f} px)")


def cmd_inspect(c: dict) -> None:
    from dnbp.evaluation.analysis import inspect_pairwise
    from dnbp.simulators.dataset import SequenceDataset
    from dnbp.training import load_potentials

    pot, _ = load_potentials(_existing(c["checkpoint"], "checkpoint"))
    try:
        a, b = (int(s) for s in c["edge"].split("-"))
    except ValueError:
        raise UsageError(f"--edge expects a-b, got {c['edge']!r}") from None
    data = _existing(c["data"], "training data")
    if (data / "train").is_dir():
        data = data / "train"
    res = inspect_pairwise(pot, (a, b), SequenceDataset(data), n_samples=c["samples"],
                           seed=c["seed"])
    res.save(c["out"])
    print(f"modal radius: training {res.train_modal_radius:.3f}, density grid "
          f"{res.grid_modal_radius:.3f}; sampler TV distance {res.tv_distance:.3f} "
          f"({'matches' if res.sampler_matches else 'does not match'})")


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "track": cmd_track,
            "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "dnbp: error: a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        try:
            config = resolve(args)
        except UsageError as e:
            raise UsageError(parser.subcommands[args.command].format_usage() + str(e)) from None
        COMMANDS[args.command](config)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
