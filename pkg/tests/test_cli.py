import json

import pytest
import torch

from dnbp.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, KEYS, build_parser, main, parse_config_file
from dnbp.diffcore import save_checkpoint
from dnbp.errors import ConfigError
from dnbp.graph import Potentials, pendulum_graph
from dnbp.training import checkpoint_meta, TrainConfig


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    torch.manual_seed(0)
    pot = Potentials(pendulum_graph())
    path = tmp_path_factory.mktemp("ck") / "untrained.bin"
    save_checkpoint(path, "pendulum", dict(pot.named_parameters()),
                    checkpoint_meta(pot, TrainConfig()))
    return path


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for key in KEYS:
        assert key in text
    for cmd in ("generate", "train", "track", "eval", "inspect"):
        assert cmd in text
    assert "config keys" in build_parser().subcommands["train"].format_help()


def test_train_without_data_prints_usage(capsys):
    assert main(["train", "--out", "x.bin"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert err.startswith("usage: dnbp train") and "--data is required" in err


def test_unknown_flag_and_missing_subcommand(capsys):
    assert main(["train", "--bogus", "1"]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err
    assert main([]) == EXIT_USAGE


def test_missing_data_directory_is_a_data_error(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", "x.bin"]) == EXIT_DATA
    assert "not found" in capsys.readouterr().err


def test_config_file_errors_name_the_line(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nlr = 0.01\nlearning_rate = 3\n")
    with pytest.raises(ConfigError, match=r"run.cfg:3"):
        parse_config_file(cfg)
    cfg.write_text("particles = many\n")
    assert main(["train", "--config", str(cfg), "--data", ".", "--out", "x"]) == EXIT_USAGE
    assert "run.cfg:1" in capsys.readouterr().err
    cfg.write_text("just words\n")
    with pytest.raises(ConfigError, match=":1"):
        parse_config_file(cfg)


def test_config_values_yield_to_flags(tmp_path):
    from dnbp.cli import resolve

    cfg = tmp_path / "run.cfg"
    cfg.write_text("lr = 0.01\nbatch = 3  # inline comment\nmax-epochs = 7\n")
    parser = build_parser()
    args = parser.parse_args(["train", "--config", str(cfg), "--data", "d", "--out", "o",
                              "--lr", "0.5"])
    values = resolve(args)
    assert values["lr"] == 0.5 and values["batch"] == 3 and values["max_epochs"] == 7
    assert values["patience"] == KEYS["patience"][1]
    cfg.write_text("edge = 0-1\n")
    with pytest.raises(ConfigError, match="does not apply"):
        resolve(parser.parse_args(["train", "--config", str(cfg), "--data", "d", "--out", "o"]))


def test_generate_scale_arithmetic(tmp_path, capsys):
    out = tmp_path / "D"
    assert main(["generate", "--task", "pendulum", "--split", "train", "--scale", "0.05",
                 "--seed", "7", "--train-frames", "2", "--jobs", "1", "--out", str(out)]) == EXIT_OK
    dirs = [p for p in out.iterdir() if (p / "labels.json").is_file()]
    assert len(dirs) == 51
    assert "51 sequences" in capsys.readouterr().out


def test_track_contract_and_determinism(tmp_path, tiny_pendulum_data, checkpoint):
    argv = ["track", "--checkpoint", str(checkpoint), "--data", str(tiny_pendulum_data / "test"),
            "--sequence", "2", "--particles", "200", "--u-samples", "2", "--seed", "3"]
    assert main(argv + ["--out", str(tmp_path / "a.jsonl")]) == EXIT_OK
    assert main(argv + ["--out", str(tmp_path / "b.jsonl")]) == EXIT_OK
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    head = json.loads(lines[0])
    assert head["particles"] == 200 and head["frames"] == 6
    frames = [json.loads(x) for x in lines[1:]]
    assert len(frames) == 6 and all(len(f["nodes"]) == 3 for f in frames)
    assert all(len(n["estimate"]) == 2 for f in frames for n in f["nodes"])
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    bad = argv[:-2] + ["--sequence", "99", "--out", str(tmp_path / "c.jsonl")]
    assert main(bad) == EXIT_DATA


def test_eval_and_inspect_write_artifacts(tmp_path, tiny_pendulum_data, checkpoint, capsys):
    assert main(["eval", "--checkpoint", str(checkpoint), "--data",
                 str(tiny_pendulum_data / "test"), "--particles", "10", "--u-samples", "2",
                 "--max-frames", "2", "--jobs", "1", "--out", str(tmp_path / "ev")]) == EXIT_OK
    assert (tmp_path / "ev" / "errors.csv").is_file()
    assert "uniform baseline" in capsys.readouterr().out
    assert main(["inspect", "--checkpoint", str(checkpoint), "--data", str(tiny_pendulum_data),
                 "--edge", "1-2", "--samples", "2000", "--out", str(tmp_path / "ins")]) == EXIT_OK
    assert (tmp_path / "ins" / "pairwise_1-2.npz").is_file()
    assert main(["inspect", "--checkpoint", str(checkpoint), "--data", str(tiny_pendulum_data),
                 "--edge", "zero-one", "--out", str(tmp_path / "ins")]) == EXIT_USAGE
    assert main(["inspect", "--checkpoint", str(checkpoint), "--data", str(tiny_pendulum_data),
                 "--edge", "0-2", "--out", str(tmp_path / "ins")]) == EXIT_DATA


def test_train_command_end_to_end(tmp_path, tiny_pendulum_data, capsys):
    out = tmp_path / "ck.bin"
    argv = ["train", "--data", str(tiny_pendulum_data), "--out", str(out), "--particles", "10",
            "--u-samples", "2", "--max-epochs", "1", "--batch", "4"]
    assert main(argv) == EXIT_OK
    rows = [json.loads(x) for x in capsys.readouterr().out.splitlines() if x.startswith("{")]
    assert len(rows) == 1 and rows[0]["epoch"] == 0
    first = out.read_bytes()
    assert main(argv) == EXIT_OK
    assert out.read_bytes() == first
