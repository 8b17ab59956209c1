import json

import pytest

from sigla.cli import main
from sigla.config import ConfigError, load_run_config, parse_config

TOML = """
seed = 21
rounds = 2

[strategy]
kind = "sigla"

[data]
n_vehicles = 4
n_sectors = 6
samples_per_vehicle = 80
dirichlet_alpha = 1.0
n_planted_clusters = 2
noise_sigma = 0.5
lidar_dim = 6
image_dim = 6

[train]
learning_rate = 0.05
batch_size = 32
local_epochs = 1

[channel]
mean_rate = 1e12
contact_time_min = 10.0
contact_time_max = 20.0

[selection]
policy = "budget_fraction"
value = 0.5

[mbp]
prune_fraction = 0.3

[compare]
strategies = ["fedavg", "mbp"]
include_centralized = false
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(TOML)
    return path


class TestConfigLoading:
    def test_toml_parses(self, config_path):
        cfg = load_run_config(config_path)
        assert cfg.seed == 21
        assert cfg.rounds == 2
        assert cfg.strategy.kind == "sigla"
        assert cfg.gen.n_vehicles == 4
        assert cfg.channel.contact_time_min == 10.0
        assert cfg.policy.kind == "budget_fraction"

    def test_json_parses(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(
            json.dumps(
                {
                    "seed": 5,
                    "rounds": 1,
                    "strategy": {"kind": "fedavg"},
                    "data": {"n_vehicles": 4, "n_planted_clusters": 2,
                             "samples_per_vehicle": 50, "n_sectors": 4},
                }
            )
        )
        cfg = load_run_config(path)
        assert cfg.strategy.kind == "fedavg"
        assert cfg.gen.seed == 5  # inherits the top-level seed

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("rounds = 2\n[data]\nbogus_key = 1\n")
        with pytest.raises(ConfigError, match="bogus_key"):
            load_run_config(path)

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config({"rounds": 0})

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "absent.toml")


class TestCliCommands:
    def test_generate_data(self, config_path, tmp_path):
        out = tmp_path / "data"
        code = main(
            [
                "generate-data",
                "--config",
                str(config_path),
                "--out-dir",
                str(out),
                "--format",
                "both",
            ]
        )
        assert code == 0
        assert (out / "vehicle_000.bin").exists()
        assert (out / "vehicle_003.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["planted_clusters"] == [0, 1, 0, 1]

    def test_run_writes_artifacts(self, config_path, tmp_path):
        out = tmp_path / "out"
        code = main(["run", "--config", str(config_path), "--out-dir", str(out)])
        assert code == 0
        for name in ("metrics.csv", "outcomes.csv", "summary.json", "similarity.csv"):
            assert (out / name).exists(), name
        summary = json.loads((out / "summary.json").read_text())
        assert summary["strategy"] == "sigla"
        assert summary["rounds"] == 2

    def test_run_strategy_override(self, config_path, tmp_path):
        out = tmp_path / "fedavg_out"
        code = main(
            [
                "run",
                "--config",
                str(config_path),
                "--out-dir",
                str(out),
                "--strategy",
                "fedavg",
            ]
        )
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["strategy"] == "fedavg"

    def test_export_metrics(self, config_path, tmp_path):
        out = tmp_path / "out"
        main(["run", "--config", str(config_path), "--out-dir", str(out)])
        code = main(["export-metrics", "--run-dir", str(out)])
        assert code == 0
        doc = json.loads((out / "export.json").read_text())
        assert "summary" in doc and "metrics" in doc and "outcomes" in doc
        assert len(doc["metrics"]) == 2

    def test_compare_writes_table(self, config_path, tmp_path, capsys):
        out = tmp_path / "cmp"
        code = main(
            ["compare", "--config", str(config_path), "--out-dir", str(out)]
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "fedavg" in printed and "mbp(0.3)" in printed
        assert (out / "comparison.csv").exists()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("rounds = 0\n")
        assert main(["run", "--config", str(bad)]) == 1

    def test_divergence_exit_code(self, tmp_path):
        diverging = tmp_path / "diverge.toml"
        diverging.write_text(
            TOML.replace("learning_rate = 0.05", "learning_rate = 1e13").replace(
                "local_epochs = 1", "local_epochs = 30"
            )
        )
        assert main(["run", "--config", str(diverging)]) == 2

    def test_missing_run_dir_exit_code(self, tmp_path):
        assert main(["export-metrics", "--run-dir", str(tmp_path / "nope")]) == 1
