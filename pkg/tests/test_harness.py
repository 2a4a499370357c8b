"""Configuration round-tripping and CLI behavior."""

import os

import numpy as np
import pytest

from rilir.config import (
    RunConfig,
    apply_overrides,
    canonical,
    load_config,
    parse_config,
    save_config,
)
from rilir.envsim import collect_expert, load_expert_dataset
from rilir.errors import AggregationError, ConfigError
from rilir.harness import main, summarize
from rilir.representation import read_pgm


class TestRunConfig:
    def test_empty_text_gives_defaults(self):
        assert parse_config("") == RunConfig()

    def test_canonical_round_trip_is_identity(self):
        cfg = RunConfig(seed=3, eta=0.25, no_discriminator=True, perturbation="white_noise(0.2)")
        assert parse_config(canonical(cfg)) == cfg

    def test_canonicalization_idempotent(self):
        text = "seed = 7\n# comment\n\nlearning_rate = 3e-4\nno_representation = true\n"
        once = canonical(parse_config(text))
        assert canonical(parse_config(once)) == once

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# full line\nseed = 9  # trailing\n\n  gamma = 0.5\n")
        assert cfg.seed == 9
        assert cfg.gamma == 0.5

    def test_unknown_key_names_offender(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("learning_rte = 0.1\n")
        assert exc.value.key == "learning_rte"

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("seed = 1\nseed = 2\n")
        assert exc.value.key == "seed"

    def test_type_errors_name_key(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("total_steps = soon\n")
        assert exc.value.key == "total_steps"
        with pytest.raises(ConfigError):
            parse_config("no_discriminator = yes\n")

    def test_range_validation(self):
        for text in ("gamma = 1.5", "polyak = 0.0", "batch_size = 0", "noise_clip = -1"):
            with pytest.raises(ConfigError):
                parse_config(text)
        with pytest.raises(ConfigError):
            RunConfig(reward_space="latent")
        with pytest.raises(ConfigError):
            RunConfig(env_id="cartpole")
        with pytest.raises(ConfigError):
            RunConfig(perturbation="blur(3)")

    def test_apply_overrides_coerces_strings(self):
        cfg = apply_overrides(RunConfig(), {"total_steps": "25", "eta": "0.75", "no_discriminator": "true"})
        assert cfg.total_steps == 25
        assert cfg.eta == 0.75
        assert cfg.no_discriminator is True
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), {"bogus": "1"})

    def test_save_load_file(self, tmp_path):
        cfg = RunConfig(seed=11, sinkhorn_epsilon=0.02)
        path = str(tmp_path / "c.txt")
        save_config(cfg, path)
        assert load_config(path) == cfg


@pytest.fixture(scope="module")
def expert_file(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("data") / "exp.bin")
    collect_expert("point_reach", 3, 10, seed=2).save(path)
    return path


def tiny_train_args(expert_file, out_dir, seed=0, steps=40, **extra):
    args = [
        "train",
        "--expert_path",
        expert_file,
        "--horizon",
        "10",
        "--total_steps",
        str(steps),
        "--bc_epochs",
        "1",
        "--eval_interval",
        "20",
        "--eval_episodes",
        "2",
        "--batch_size",
        "8",
        "--seed",
        str(seed),
        "--out_dir",
        out_dir,
    ]
    for key, value in extra.items():
        args += [f"--{key}", str(value)]
    return args


class TestCli:
    def test_gen_expert_writes_dataset_and_baseline(self, tmp_path, capsys):
        path = str(tmp_path / "e.bin")
        code = main(["gen-expert", "--env", "point_reach", "--n", "2", "--horizon", "10", "--expert_path", path])
        assert code == 0
        dataset = load_expert_dataset(path)
        assert len(dataset) == 2
        with open(path + ".baseline.txt") as fh:
            text = fh.read()
        assert repr(dataset.mean_diag_return()) in text

    def test_train_zero_steps_artifacts(self, tmp_path, expert_file):
        out = str(tmp_path / "zero")
        code = main(tiny_train_args(expert_file, out, steps=0, bc_epochs=0))
        assert code == 0
        with open(os.path.join(out, "training_log.csv")) as fh:
            lines = fh.read().splitlines()
        assert len(lines) == 1
        for name in ("checkpoint_bc.bin", "checkpoint_final.bin", "config.txt"):
            assert os.path.exists(os.path.join(out, name))

    def test_config_snapshot_reflects_effective_run(self, tmp_path, expert_file):
        out = str(tmp_path / "snap")
        assert main(tiny_train_args(expert_file, out, steps=20)) == 0
        snap = load_config(os.path.join(out, "config.txt"))
        assert snap.total_steps == 20
        assert snap.horizon == 10
        assert snap.out_dir == out

    def test_eval_on_bc_checkpoint_matches_step_zero_row(self, tmp_path, expert_file, capsys):
        out = str(tmp_path / "jump")
        assert main(tiny_train_args(expert_file, out, steps=20, seed=6)) == 0
        with open(os.path.join(out, "training_log.csv")) as fh:
            header, first, *_ = fh.read().splitlines()
        logged = float(first.split(",")[2])
        capsys.readouterr()
        code = main(
            [
                "eval",
                "--checkpoint",
                os.path.join(out, "checkpoint_bc.bin"),
                "--env",
                "point_reach",
                "--horizon",
                "10",
                "--episodes",
                "2",
                "--seed",
                "6",
            ]
        )
        assert code == 0
        printed = capsys.readouterr().out
        mean = float(printed.split("eval_return_mean = ")[1].splitlines()[0])
        assert mean == pytest.approx(logged, abs=5e-10)

    def test_invalid_config_exits_2_naming_key(self, capsys, expert_file):
        code = main(["train", "--expert_path", expert_file, "--gamma", "2.0"])
        assert code == 2
        assert "gamma" in capsys.readouterr().err

    def test_missing_files_exit_nonzero(self, tmp_path, capsys):
        code = main(["train", "--expert_path", str(tmp_path / "nope.bin"), "--total_steps", "0"])
        assert code == 1
        code = main(["eval", "--checkpoint", str(tmp_path / "nope.bin")])
        assert code == 1

    def test_saliency_writes_maps(self, tmp_path, expert_file, capsys):
        out = str(tmp_path / "sal_run")
        assert main(tiny_train_args(expert_file, out, steps=0, bc_epochs=0)) == 0
        maps_dir = str(tmp_path / "maps")
        code = main(
            [
                "saliency",
                "--checkpoint",
                os.path.join(out, "checkpoint_final.bin"),
                "--env",
                "point_reach",
                "--horizon",
                "10",
                "--count",
                "2",
                "--out_dir",
                maps_dir,
            ]
        )
        assert code == 0
        data, maxval = read_pgm(os.path.join(maps_dir, "saliency_001.pgm"))
        assert data.shape == (32, 16)
        assert maxval == 255

    def test_rilir_out_env_var_roots_relative_paths(self, tmp_path, expert_file, monkeypatch):
        monkeypatch.setenv("RILIR_OUT", str(tmp_path))
        assert main(tiny_train_args(expert_file, "rooted", steps=0, bc_epochs=0)) == 0
        assert os.path.exists(str(tmp_path / "rooted" / "config.txt"))


class TestSummarize:
    def run_seed(self, tmp_path, expert_file, seed, parent="multi", **extra):
        out = str(tmp_path / parent / f"seed{seed}")
        assert main(tiny_train_args(expert_file, out, seed=seed, steps=20, **extra)) == 0
        return out

    def final_eval_of(self, run_dir):
        with open(os.path.join(run_dir, "training_log.csv")) as fh:
            return float(fh.read().splitlines()[-1].split(",")[2])

    def test_single_run_row_equals_final_eval(self, tmp_path, expert_file):
        run = self.run_seed(tmp_path, expert_file, 0, parent="single")
        rows = summarize([[run]])
        assert rows[0]["final_return_mean"] == self.final_eval_of(run)
        assert rows[0]["seeds"] == 1

    def test_three_seed_mean_is_arithmetic(self, tmp_path, expert_file):
        runs = [self.run_seed(tmp_path, expert_file, s) for s in (0, 1, 2)]
        rows = summarize([runs])
        finals = [self.final_eval_of(r) for r in runs]
        assert abs(rows[0]["final_return_mean"] - np.mean(finals)) < 1e-12
        assert rows[0]["seeds"] == 3

    def test_fraction_of_expert_uses_recorded_baseline(self, tmp_path, expert_file):
        run = self.run_seed(tmp_path, expert_file, 0, parent="frac")
        rows = summarize([[run]])
        baseline = load_expert_dataset(expert_file).mean_diag_return()
        expected = self.final_eval_of(run) / baseline
        assert abs(rows[0]["fraction_of_expert"] - expected) < 1e-12

    def test_mismatched_group_rejected(self, tmp_path, expert_file):
        a = self.run_seed(tmp_path, expert_file, 0, parent="mix")
        b = self.run_seed(tmp_path, expert_file, 1, parent="mix", gamma="0.5")
        with pytest.raises(AggregationError):
            summarize([[a, b]])

    def test_cli_group_expansion(self, tmp_path, expert_file, capsys):
        for s in (0, 1):
            self.run_seed(tmp_path, expert_file, s, parent="grp")
        code = main(["summarize", str(tmp_path / "grp")])
        assert code == 0
        out = capsys.readouterr().out
        assert "point_reach|none|full" in out

    def test_auc_of_constant_curve_equals_constant(self, tmp_path, expert_file):
        # two rows with identical eval values make the trapezoid exact
        run = self.run_seed(tmp_path, expert_file, 3, parent="auc", sigma_explore="0.0", bc_epochs="0")
        rows = summarize([[run]])
        assert np.isfinite(rows[0]["auc"])


class TestSweep:
    def test_grid_produces_four_runs_and_summary(self, tmp_path, capsys):
        out = str(tmp_path / "sw")
        code = main(
            [
                "sweep",
                "--task",
                "point_reach",
                "--perturb",
                "random_mask(4,2)",
                "--seeds",
                "0",
                "--steps",
                "20",
                "--bc_epochs",
                "0",
                "--eval_interval",
                "20",
                "--eval_episodes",
                "2",
                "--batch_size",
                "8",
                "--horizon",
                "10",
                "--n",
                "2",
                "--out_dir",
                out,
                "--ablation",
                "no_representation",
            ]
        )
        assert code == 0
        cells = ["clean-full", "clean-no_representation", "perturbed-full", "perturbed-no_representation"]
        for cell in cells:
            assert os.path.exists(os.path.join(out, cell, "seed0", "training_log.csv"))
        assert os.path.exists(os.path.join(out, "summary.csv"))
        text = capsys.readouterr().out
        assert "random_mask(4,2)" in text
