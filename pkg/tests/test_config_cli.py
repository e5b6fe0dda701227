"""Configuration grammar and the command-line harness."""

import numpy as np
import pytest

from cilearn import ConfigError
from cilearn.cli import main
from cilearn.config import (
    apply_setting,
    default_experiment_config,
    load_config_file,
    parse_config_text,
    resolve_key,
    valid_keys,
)


class TestConfigGrammar:
    def test_parse_basic_file(self):
        cfg = parse_config_text("""
            # a comment
            train.keep_ratio = 0.3
            experiment.phases = 2   # trailing comment
            model.stage_channels = 8,16
        """)
        assert cfg.train.keep_ratio == 0.3
        assert cfg.phases == 2
        assert cfg.model.stage_channels == (8, 16)

    def test_suffix_resolution(self):
        assert resolve_key("keep_ratio") == "train.keep_ratio"
        assert resolve_key("phases") == "experiment.phases"

    def test_ambiguous_suffix_rejected(self):
        with pytest.raises(ConfigError, match="ambiguous"):
            resolve_key("seed")

    def test_unknown_key_lists_valid_keys(self):
        with pytest.raises(ConfigError) as err:
            resolve_key("bogus_key")
        assert "train.keep_ratio" in str(err.value)

    def test_bad_value_reports_key(self):
        cfg = default_experiment_config()
        with pytest.raises(ConfigError, match="train.batch_size"):
            apply_setting(cfg, "batch_size", "many")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("just some words\n")

    def test_every_declared_key_is_appliable(self):
        cfg = default_experiment_config()
        samples = {
            str: "x", int: "3", float: "0.5",
        }
        from cilearn.config import _CASTERS
        for key, caster in _CASTERS.items():
            value = {"dataset.kind": "synthetic", "train.augment": "none",
                     "experiment.timing": "none"}.get(key)
            if value is None:
                value = "4,8" if caster.__name__ == "_parse_int_tuple" else samples[caster]
            apply_setting(cfg, key, value)

    def test_shipped_configs_parse(self):
        cfg = load_config_file("configs/desk.cfg")
        cfg.validate()
        assert cfg.train.keep_ratio == 0.5
        cfg2 = load_config_file("configs/resnet18.cfg")
        assert cfg2.model.stage_channels == (64, 128, 256, 512)


def run_cli(*argv):
    return main(list(argv))


class TestCli:
    def test_missing_config_file_is_data_error(self, capsys):
        assert run_cli("count", "--config", "/nonexistent/conf.cfg") == 2
        assert "data error" in capsys.readouterr().err

    def test_unknown_key_is_usage_error(self, capsys):
        assert run_cli("count", "--set", "bogus=1") == 1
        assert "usage error" in capsys.readouterr().err

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert run_cli("frobnicate") == 1

    def test_count_reports_ratios(self, capsys):
        assert run_cli("count") == 0
        out = capsys.readouterr().out
        ratios = [float(line.rsplit("ratio ", 1)[1].rstrip(")"))
                  for line in out.splitlines() if "ratio" in line]
        assert len(ratios) == 4
        assert all(r < 0.55 for r in ratios)

    def test_tiny_incr_run_and_artifacts(self, tmp_path, capsys):
        code = run_cli(
            "incr-run", "--out", str(tmp_path), "--seed", "5",
            "--set", "dataset.classes=4", "--set", "train_per_class=8",
            "--set", "test_per_class=4", "--set", "initial_epochs=1",
            "--set", "incremental_epochs=2", "--set", "prune_at_epoch=1",
            "--set", "experiment.phases=2", "--set", "batch_size=8",
            "--set", "stage_channels=4,8", "--set", "blocks_per_stage=1,1",
            "--set", "feature_dim=8")
        assert code == 0
        out = capsys.readouterr().out
        assert "# train.keep_ratio = 0.5" in out  # config echo in the header
        assert (tmp_path / "metrics.csv").exists()
        assert (tmp_path / "train_log.csv").exists()
        assert (tmp_path / "model.ckpt").exists()
        assert (tmp_path / "prototypes.bin").exists()
        lines = [l for l in (tmp_path / "metrics.csv").read_text().splitlines()
                 if l and not l.startswith("#")]
        assert lines[0].startswith("phase,")
        assert len(lines) == 1 + 3  # header + initial + two phases

    def test_set_override_reflected_in_metrics_header(self, tmp_path):
        run_cli("incr-run", "--out", str(tmp_path), "--seed", "5",
                "--set", "dataset.classes=4", "--set", "train_per_class=6",
                "--set", "test_per_class=4", "--set", "initial_epochs=1",
                "--set", "incremental_epochs=0", "--set", "experiment.phases=2",
                "--set", "batch_size=8", "--set", "stage_channels=4,8",
                "--set", "blocks_per_stage=1,1", "--set", "feature_dim=8",
                "--set", "keep_ratio=0.3")
        header = (tmp_path / "metrics.csv").read_text()
        assert "# train.keep_ratio = 0.3" in header

    def test_init_train_eval_fuse_scoredump_round_trip(self, tmp_path, capsys):
        base = ["--out", str(tmp_path), "--seed", "3",
                "--set", "dataset.classes=4", "--set", "train_per_class=8",
                "--set", "test_per_class=4", "--set", "initial_epochs=2",
                "--set", "batch_size=8", "--set", "stage_channels=4,8",
                "--set", "blocks_per_stage=1,1", "--set", "feature_dim=8",
                "--set", "experiment.phases=2"]
        assert run_cli("init-train", *base) == 0
        ckpt = str(tmp_path / "model.ckpt")
        assert run_cli("eval", "--checkpoint", ckpt, *base) == 0
        out = capsys.readouterr().out
        assert "top1_acc:" in out
        assert run_cli("fuse", "--checkpoint", ckpt, *base) == 0
        out = capsys.readouterr().out
        assert "no live adapters" in out
        assert run_cli("score-dump", "--checkpoint", ckpt, *base) == 0
        scores = (tmp_path / "scores.csv").read_text().splitlines()
        assert scores[0] == "sample_index,class_id,score,epoch"
        assert len(scores) == 1 + 16  # 2 initial classes x 8 samples
