import json

import numpy as np
import pytest

from fedcsi import cli
from fedcsi.config import ExperimentConfig, apply_override, stage_seed
from fedcsi.datasets import load_dataset
from fedcsi.errors import ConfigError

TINY = {
    "n_subcarriers": 8,
    "geometry": {"n_rows": 4, "n_cols": 4},
    "swtcan": {"pilot_slots": 4, "feedback_bits": 32, "embed_dim": 16,
               "window_size": 4, "depths": [1], "n_heads": [2], "patch_size": 2},
    "vae": {"latent_dim": 8, "conv_widths": [8, 16], "fc_width": 32},
    "data": {"n_train": 16, "n_val": 4, "n_test": 4, "n_scarce": 4, "n_synthetic": 16},
    "train": {"epochs": 1, "batch_size": 8},
    "fed": {"n_ues": 4, "participation": 1.0, "rounds": 2, "samples_per_ue": 2},
}


def tiny_config_file(tmp_path, extra=None):
    raw = json.loads(json.dumps(TINY))
    if extra:
        raw.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


class TestConfig:
    def test_defaults_resolve(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.swtcan.n_bs == cfg.geometry.n_bs == 64
        assert cfg.vae.n_subcarriers == cfg.n_subcarriers == 32
        assert set(cfg.scenarios) == {"pretrain", "target"}

    def test_cross_field_dimensions_propagate(self):
        cfg = ExperimentConfig.from_dict(TINY)
        assert cfg.swtcan.n_bs == 16
        assert cfg.vae.n_bs == 16
        assert cfg.scenarios["target"].n_subcarriers == 8

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            ExperimentConfig.from_dict({"swtcnn": {}})

    def test_invariant_violation_carries_field_path(self):
        raw = json.loads(json.dumps(TINY))
        raw["swtcan"]["feedback_bits"] = 33
        with pytest.raises(ConfigError, match="swtcan"):
            ExperimentConfig.from_dict(raw)

    def test_unknown_preset_rejected(self):
        raw = json.loads(json.dumps(TINY))
        raw["scenarios"] = {"pretrain": {"preset": "Z-like"},
                            "target": {"preset": "B-like"}}
        with pytest.raises(ConfigError, match="scenarios.pretrain"):
            ExperimentConfig.from_dict(raw)

    def test_missing_role_filled_from_defaults(self):
        raw = json.loads(json.dumps(TINY))
        raw["scenarios"] = {"target": {"preset": "C-like"}}
        cfg = ExperimentConfig.from_dict(raw)
        assert cfg.scenarios["pretrain"].label == "A-like"
        assert cfg.scenarios["target"].label == "C-like"

    def test_extra_role_without_preset_rejected(self):
        raw = json.loads(json.dumps(TINY))
        raw["scenarios"] = {"extra": {"seed": 1}}
        with pytest.raises(ConfigError, match="preset"):
            ExperimentConfig.from_dict(raw)

    def test_override_paths(self):
        raw = apply_override({}, "fed.rounds=7")
        raw = apply_override(raw, "scenarios.target.preset=C-like")
        raw = apply_override(raw, "out_dir=elsewhere")
        cfg = ExperimentConfig.from_dict(raw)
        assert cfg.fed.rounds == 7
        assert cfg.scenarios["target"].label == "C-like"
        assert cfg.out_dir == "elsewhere"

    def test_bad_override_rejected(self):
        with pytest.raises(ConfigError):
            apply_override({}, "no-equals-sign")

    def test_hash_stable_and_sensitive(self):
        a = ExperimentConfig.from_dict(TINY).config_hash()
        b = ExperimentConfig.from_dict(json.loads(json.dumps(TINY))).config_hash()
        assert a == b
        raw = json.loads(json.dumps(TINY))
        raw["seed"] = 5
        assert ExperimentConfig.from_dict(raw).config_hash() != a

    def test_stage_seed_deterministic_and_distinct(self):
        assert stage_seed(0, "x") == stage_seed(0, "x")
        assert stage_seed(0, "x") != stage_seed(0, "y")
        assert stage_seed(0, "x") != stage_seed(1, "x")


class TestCli:
    def test_gen_data_single_sample(self, tmp_path):
        cfg_path = tiny_config_file(tmp_path)
        out = tmp_path / "run"
        rc = cli.main(["gen-data", "--config", str(cfg_path), "--out", str(out),
                       "--role", "target", "--split", "test", "--n", "1"])
        assert rc == 0
        samples, meta = load_dataset(out / "data" / "target-test.npz")
        assert len(samples) == 1
        assert meta["n_samples"] == 1
        assert meta["scenario_label"] == "B-like"

    def test_gen_data_unknown_role(self, tmp_path):
        cfg_path = tiny_config_file(tmp_path)
        rc = cli.main(["gen-data", "--config", str(cfg_path),
                       "--out", str(tmp_path / "r"), "--role", "nope"])
        assert rc == 1

    def test_config_violation_exit_code(self, tmp_path):
        cfg_path = tiny_config_file(tmp_path)
        rc = cli.main(["gen-data", "--config", str(cfg_path),
                       "--out", str(tmp_path / "r"),
                       "--override", "swtcan.feedback_bits=33"])
        assert rc == 1

    def test_unknown_command_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["gen-data", "--frobnicate"])
        assert exc.value.code == 2

    def test_plot_renders_png_and_csv(self, tmp_path):
        metrics = tmp_path / "hist.jsonl"
        rows = [{"round": t, "nmse_db": -1.0 * t, "uplink_reals_cum": 10 * t}
                for t in range(1, 5)]
        metrics.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        out_base = tmp_path / "fig"
        rc = cli.main(["plot", "--metrics", str(metrics), "--x", "round",
                       "--y", "nmse_db", "--plot-out", str(out_base)])
        assert rc == 0
        assert (tmp_path / "fig.png").exists()
        csv_text = (tmp_path / "fig.csv").read_text().splitlines()
        assert csv_text[0] == "round,nmse_db"
        assert len(csv_text) == 5

    def test_plot_missing_key(self, tmp_path):
        metrics = tmp_path / "hist.jsonl"
        metrics.write_text(json.dumps({"a": 1}) + "\n")
        rc = cli.main(["plot", "--metrics", str(metrics), "--x", "round",
                       "--y", "nmse_db"])
        assert rc == 1

    def test_evaluate_on_generated_data(self, tmp_path):
        cfg_path = tiny_config_file(tmp_path)
        out = tmp_path / "run"
        rc = cli.main(["pretrain-swtcan", "--config", str(cfg_path),
                       "--out", str(out)])
        assert rc == 0
        rc = cli.main(["evaluate", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "reports" / "evaluate.json").read_text())
        assert np.isfinite(report["nmse_db"])


class TestWorkflowSmoke:
    """End-to-end CLI chain at the tiniest scale."""

    def test_vae_to_synthetic_to_pretrain(self, tmp_path):
        cfg_path = tiny_config_file(
            tmp_path, {"vae_train": {"epochs": 1, "finetune_epochs": 1}})
        out = tmp_path / "run"
        common = ["--config", str(cfg_path), "--out", str(out)]
        assert cli.main(["pretrain-vae", *common]) == 0
        assert cli.main(["gen-synthetic", *common, "--n", "8"]) == 0
        samples, meta = load_dataset(out / "data" / "synthetic.npz")
        assert len(samples) == 8 and meta["split"] == "synthetic"
        assert cli.main(["pretrain-swtcan", *common,
                         "--train-data", str(out / "data" / "synthetic.npz")]) == 0
        assert (out / "checkpoints" / "pretrained.npz").exists()

    def test_fedtune_and_central_baseline(self, tmp_path):
        cfg_path = tiny_config_file(tmp_path)
        out = tmp_path / "run"
        common = ["--config", str(cfg_path), "--out", str(out)]
        assert cli.main(["pretrain-swtcan", *common]) == 0
        assert cli.main(["fedtune", *common]) == 0
        hist = [json.loads(l) for l in (out / "metrics" / "fl-history.jsonl").read_text().splitlines()]
        assert len(hist) == 2
        assert set(hist[0]) == {"round", "nmse_db", "uplink_reals_cum", "wall_model_seconds"}
        budget = json.loads((out / "reports" / "budget.json").read_text())
        assert budget["fl_uplink_reals"] == 2 * budget["d"]
        assert cli.main(["central-baseline", *common, "--t0", "2"]) == 0
        assert (out / "reports" / "central-baseline.json").exists()
