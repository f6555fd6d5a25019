"""Tests for the mode-comparison harness (kept tiny so they stay fast)."""

import numpy as np
import pytest

from attnprior.ablation import (
    ExperimentConfig,
    ExperimentReport,
    RunResult,
    report_rows,
    run_ablation,
    train_single,
    write_report_csv,
)
from attnprior.bias import BiasMode
from attnprior.decoder import DecoderModel, params_checksum

TINY = dict(n_train=16, n_eval=4, grid=8, d_model=8, n_layers=2, n_heads=2,
            max_pos=96, batch_size=4, total_steps=3, max_new=4)


def tiny_config(**overrides):
    return ExperimentConfig(**{**TINY, **overrides})


class TestExperimentConfig:
    def test_defaults_cover_all_modes_and_three_seeds(self):
        cfg = ExperimentConfig()
        assert cfg.modes == (BiasMode.NO_MASK, BiasMode.MASK, BiasMode.HIDDEN_MASK)
        assert cfg.seeds == (0, 1, 2)
        assert cfg.total_steps == 2000

    def test_string_modes_are_canonicalized(self):
        cfg = tiny_config(modes=("mask", "nomask"))
        assert cfg.modes == (BiasMode.MASK, BiasMode.NO_MASK)

    def test_derived_configs_are_consistent(self):
        cfg = tiny_config()
        assert cfg.decoder_config.visual_len == cfg.grid ** 2
        assert cfg.schedule.n_layers == cfg.n_layers
        assert cfg.train_config.total_steps == cfg.total_steps

    def test_from_mapping_parses_strings(self):
        cfg = ExperimentConfig.from_mapping({
            "modes": "nomask, mask",
            "seeds": "4,5",
            "n_train": "16",
            "n_eval": "4",
            "grid": "8",
            "d_model": "8",
            "n_layers": "2",
            "n_heads": "2",
            "batch_size": "4",
            "total_steps": "3",
            "normalize": "false",
            "scale": "0.5",
            "base_lr": "1e-3",
        })
        assert cfg.modes == (BiasMode.NO_MASK, BiasMode.MASK)
        assert cfg.seeds == (4, 5)
        assert cfg.normalize is False
        assert cfg.scale == 0.5
        assert cfg.base_lr == 1e-3

    def test_from_mapping_rejects_unknown_key(self):
        with pytest.raises(ValueError, match="unknown config key"):
            ExperimentConfig.from_mapping({"bogus": "1"})

    def test_from_mapping_rejects_bad_boolean(self):
        with pytest.raises(ValueError):
            ExperimentConfig.from_mapping({"normalize": "maybe"})

    def test_validation(self):
        with pytest.raises(ValueError):
            tiny_config(modes=())
        with pytest.raises(ValueError):
            tiny_config(seeds=())
        with pytest.raises(ValueError):
            tiny_config(total_steps=-1)
        with pytest.raises(ValueError):
            tiny_config(n_train=2, batch_size=4)
        with pytest.raises(ValueError):
            tiny_config(max_new=0)


class TestTrainSingle:
    def test_zero_steps_returns_untouched_init(self):
        cfg = tiny_config(total_steps=0)
        model, result = train_single(cfg, BiasMode.NO_MASK, seed=0)
        fresh = DecoderModel.init(cfg.decoder_config, 0)
        assert result.losses == ()
        assert params_checksum(model) == params_checksum(fresh)
        assert result.init_checksum == params_checksum(fresh)

    def test_initial_parameters_shared_across_modes(self):
        cfg = tiny_config()
        sums = set()
        for mode in (BiasMode.NO_MASK, BiasMode.MASK, BiasMode.HIDDEN_MASK):
            _, result = train_single(cfg, mode, seed=0)
            sums.add(result.init_checksum)
        assert len(sums) == 1  # identical starting point, modes differ later

    def test_loss_history_has_one_entry_per_step(self):
        cfg = tiny_config(total_steps=5)
        _, result = train_single(cfg, BiasMode.NO_MASK, seed=1)
        assert len(result.losses) == 5
        assert all(np.isfinite(v) for v in result.losses)

    def test_rerun_is_fully_deterministic(self):
        cfg = tiny_config()
        _, a = train_single(cfg, BiasMode.MASK, seed=2)
        _, b = train_single(cfg, BiasMode.MASK, seed=2)
        assert a.losses == b.losses
        assert a.final_loss == b.final_loss
        assert a.token_accuracy == b.token_accuracy
        assert a.region_token_accuracy == b.region_token_accuracy

    def test_accepts_mode_as_string(self):
        cfg = tiny_config(total_steps=1)
        _, result = train_single(cfg, "hidden", seed=0)
        assert result.mode == "hidden"

    def test_progress_callback_fires(self):
        cfg = tiny_config(total_steps=3)
        lines = []
        train_single(cfg, BiasMode.NO_MASK, seed=0, progress=lines.append)
        assert lines  # at least one report
        assert all("step" in ln for ln in lines)


class TestRunAblation:
    def test_one_run_per_mode_seed_pair(self):
        cfg = tiny_config(modes=(BiasMode.NO_MASK, BiasMode.MASK), seeds=(0, 1))
        report = run_ablation(cfg)
        assert len(report.runs) == 4
        pairs = {(r.mode, r.seed) for r in report.runs}
        assert pairs == {("nomask", 0), ("nomask", 1), ("mask", 0), ("mask", 1)}

    def test_runs_for_and_mean_metric(self):
        cfg = tiny_config(modes=(BiasMode.NO_MASK,), seeds=(0, 1))
        report = run_ablation(cfg)
        runs = report.runs_for(BiasMode.NO_MASK)
        assert len(runs) == 2
        want = np.mean([r.final_loss for r in runs])
        assert report.mean_metric("nomask", "final_loss") == pytest.approx(want)
        with pytest.raises(ValueError):
            report.mean_metric("mask", "final_loss")

    def test_csv_written_when_requested(self, tmp_path):
        cfg = tiny_config(modes=(BiasMode.NO_MASK,), seeds=(0,))
        out = tmp_path / "report.csv"
        run_ablation(cfg, out_csv=out)
        text = out.read_text()
        assert text.startswith("mode,seed,init_checksum")
        assert "nomask,0," in text
        assert "nomask,mean," in text


class TestReportRows:
    def _fake_report(self):
        cfg = tiny_config(modes=(BiasMode.NO_MASK, BiasMode.MASK), seeds=(0, 1))
        runs = []
        for mode in ("nomask", "mask"):
            for seed in (0, 1):
                runs.append(RunResult(
                    mode=mode, seed=seed, init_checksum="ab" * 8,
                    final_loss=1.0 + seed, token_accuracy=0.5,
                    region_token_accuracy=0.25 if mode == "nomask" else 0.75,
                    losses=(2.0, 1.5), runtime_s=3.14))
        return ExperimentReport(config=cfg, runs=tuple(runs))

    def test_row_counts(self):
        rows = report_rows(self._fake_report())
        # header + 4 runs + 2 mean rows
        assert len(rows) == 7
        assert rows[0][0] == "mode"

    def test_mean_rows_aggregate_per_mode(self):
        rows = report_rows(self._fake_report())
        means = {r[0]: r for r in rows if r[1] == "mean"}
        assert means["nomask"][3] == "1.500000"
        assert means["nomask"][5] == "0.250000"
        assert means["mask"][5] == "0.750000"
        assert means["nomask"][2] == ""  # no checksum on aggregate rows

    def test_runtime_never_reaches_the_csv(self):
        rows = report_rows(self._fake_report())
        flat = [cell for row in rows for cell in row]
        assert "3.14" not in " ".join(flat)
        assert "runtime" not in " ".join(rows[0])

    def test_csv_bytes_identical_across_writes(self, tmp_path):
        report = self._fake_report()
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_report_csv(report, a)
        write_report_csv(report, b)
        assert a.read_bytes() == b.read_bytes()
