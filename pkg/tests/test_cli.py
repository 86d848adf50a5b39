import re

import pytest

from interformer.cli import build_parser, build_train_config, collect_settings, main
from interformer.model import BlockConfig, count_parameters
from interformer.training import Model

TINY = ["--set", "block.d=8", "--set", "block.heads=2", "--set", "block.N=1", "--set", "block.subsample_channels=2",
        "--set", "task.T=16", "--set", "task.F=8", "--set", "task.motif_len=4", "--set", "task.num_samples=60",
        "--set", "train.steps=3", "--set", "train.batch=4"]


def settings(argv):
    return collect_settings(build_parser().parse_args(argv))


@pytest.mark.parametrize("command", ["check-gradients", "verify-oracles", "train", "ablate", "export-report"])
def test_help_lists_every_flag(command, capsys):
    with pytest.raises(SystemExit) as exit_:
        main([command, "--help"])
    assert exit_.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--config", "--set", "--seed", "--out", "--fusion", "--l2g", "--g2l", "--dyrelu"):
        assert flag in text


def test_missing_config_exits_2_naming_path(tmp_path, capsys):
    path = tmp_path / "missing.cfg"
    assert main(["train", "--config", str(path)]) == 2
    assert "missing.cfg" in capsys.readouterr().err


@pytest.mark.parametrize("argv,key", [(["--set", "block.d=7", "--set", "block.heads=1"], "block.d"),
                                      (["--set", "model.d=8"], "model.d"),
                                      (["--set", "block.depth=3"], "block.depth"),
                                      (["--set", "train.lr=fast"], "train.lr")])
def test_config_errors_exit_2_naming_key(argv, key, tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)] + argv) == 2
    assert f"[key: {key}]" in capsys.readouterr().err


def test_unknown_key_in_config_file(tmp_path, capsys):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("block.d = 8\nblock.typo = 1\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "block.typo" in capsys.readouterr().err


def test_overrides_win_over_config_file(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("block.d = 16\nblock.fusion_mode = concat\nblock.enable_l2g = true\ntrain.seed = 4\n")
    values = settings(["train", "--config", str(cfg), "--fusion", "add", "--l2g", "off", "--seed", "9",
                       "--set", "block.d=8"])
    tc = build_train_config(values)
    assert (tc.block.d, tc.block.fusion_mode, tc.block.enable_l2g) == (8, "add", False)
    assert tc.seed == 9 and tc.task.seed == 9


def test_set_wins_over_switch_flags():
    values = settings(["train", "--fusion", "add", "--set", "block.fusion_mode=sfm"])
    assert build_train_config(values).block.fusion_mode == "sfm"


def test_feat_dim_follows_task():
    assert build_train_config(settings(["train", "--set", "task.F=12"])).block.feat_dim == 12


def test_train_then_inspect_and_evaluate(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--out", str(out), "--seed", "3"] + TINY) == 0
    for name in ("curve.csv", "summary.csv", "model.ckpt", "train.cfg"):
        assert (out / name).is_file()
    capsys.readouterr()
    assert main(["inspect", str(out / "model.ckpt"), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    total = int(re.search(r"total parameters: (\d+)", text).group(1))
    cfg = BlockConfig(d=8, heads=2, N=1, subsample_channels=2, feat_dim=8)
    assert total == count_parameters(cfg)["encoder"] + 8 * 2 + 2
    assert total == Model(cfg).parameter_count()
    assert main(["evaluate", str(out / "model.ckpt"), "--seed", "3"] + TINY) == 0
    assert "val accuracy" in capsys.readouterr().out
    assert main(["evaluate", str(out / "model.ckpt"), "--set", "task.F=12", "--set", "task.T=16",
                 "--set", "task.motif_len=4", "--set", "task.num_samples=20"]) == 2


def test_inspect_fresh_reference_checkpoint(tmp_path, capsys, small_config):
    Model(small_config).save(tmp_path / "ref.ckpt")
    assert main(["inspect", str(tmp_path / "ref.ckpt")]) == 0
    text = capsys.readouterr().out
    assert re.search(r"block total\s+2096", text)
    total = int(re.search(r"total parameters: (\d+)", text).group(1))
    assert total == count_parameters(small_config)["encoder"] + 18


def test_divergent_training_exits_1(tmp_path, capsys):
    # an absurd learning rate blows up the weights within a few steps
    argv = ["train", "--out", str(tmp_path)] + TINY + ["--set", "train.lr=1e150", "--set", "train.clip_norm=0",
                                                        "--set", "train.steps=40"]
    code = main(argv)
    err = capsys.readouterr().err
    assert code == 1 and "diverged" in err
    assert (tmp_path / "curve.csv").is_file()


def test_ablate_writes_both_tables(tmp_path):
    argv = ["ablate", "--out", str(tmp_path), "--seeds", "2"] + TINY + ["--set", "train.steps=1"]
    assert main(argv) == 0
    for name in ("table3.csv", "table4.csv"):
        lines = (tmp_path / name).read_text().splitlines()
        assert len(lines) == 7 and lines[0].startswith("name,")


def test_export_report_collects_csvs(tmp_path):
    (tmp_path / "extra.csv").write_text("a,b\n1,2\n")
    assert main(["export-report", "--out", str(tmp_path)]) == 0
    report = (tmp_path / "report.csv").read_text()
    assert "extra.csv,0,a,1" in report
    params = (tmp_path / "parameters.csv").read_text()
    assert "table3,parallel,total.block," in params


def test_verify_oracles_passes(capsys):
    assert main(["verify-oracles", "--instances", "5"]) == 0
    assert "passed" in capsys.readouterr().out
