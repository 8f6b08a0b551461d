import json
import os

import pytest

from transitnet import __version__
from transitnet.cli import dispatch, load_run_config


def write_config(path, out_dir, extra=""):
    path.write_text(f"""
seed = 7

[paths]
output_dir = "{out_dir}"
ridership = "{out_dir}/ridership.csv"
stations = "{out_dir}/stations.csv"
edges = "{out_dir}/edges.csv"

[synth]
stations = 6
days = 21
noise_sigma = 0.05

[periods]
train = ["2024-01-01", "2024-01-14"]
test = ["2024-01-15", "2024-01-21"]

[model]
variant = "v1"
recent_len = 4
hist_len = 4
hidden = 4
kernel = 3

[train]
epochs = 2
batch_size = 64
learning_rate = 0.005

[forecast]
horizon = 6
lag_starts = 3
{extra}
""")
    return str(path)


@pytest.fixture
def workspace(tmp_path):
    out_dir = tmp_path / "out"
    cfg = write_config(tmp_path / "run.toml", out_dir.as_posix())
    return cfg, out_dir


def read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


class TestConfig:
    def test_missing_config_is_usage_error(self, tmp_path):
        assert dispatch(["synth", "--config", str(tmp_path / "nope.toml")]) == 1

    def test_malformed_config_is_usage_error(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[paths\noops")
        assert dispatch(["synth", "--config", str(bad)]) == 1

    def test_unknown_command_is_usage_error(self, workspace):
        cfg, _ = workspace
        assert dispatch(["explode", "--config", cfg]) == 1

    def test_seed_override_changes_hash(self, workspace):
        cfg, _ = workspace
        a = load_run_config(cfg, None)
        b = load_run_config(cfg, 99)
        assert a.seed == 7 and b.seed == 99
        assert a.config_hash != b.config_hash

    def test_header_carries_version_hash_seed(self, workspace):
        cfg, _ = workspace
        rc = load_run_config(cfg, None)
        header = rc.header()
        assert header.startswith(f"# transitnet {__version__} ")
        assert f"config_hash={rc.config_hash}" in header
        assert "seed=7" in header


class TestSynth:
    def test_writes_dataset_files(self, workspace):
        cfg, out = workspace
        assert dispatch(["synth", "--config", cfg]) == 0
        for name in ("ridership.csv", "stations.csv", "edges.csv", "manifest.json"):
            assert (out / name).exists()

    def test_same_seed_byte_identical(self, tmp_path):
        blobs = []
        for run in ("a", "b"):
            out = tmp_path / run
            cfg = write_config(tmp_path / f"{run}.toml", out.as_posix())
            assert dispatch(["synth", "--config", cfg]) == 0
            blobs.append((out / "ridership.csv").read_bytes())
        # Same seed and synth settings: identical bytes apart from the
        # config-hash header (paths differ), so compare from line 2 on.
        assert blobs[0].split(b"\n", 1)[1] == blobs[1].split(b"\n", 1)[1]

    def test_seed_override_changes_data(self, workspace, tmp_path):
        cfg, out = workspace
        assert dispatch(["synth", "--config", cfg]) == 0
        first = (out / "ridership.csv").read_bytes().split(b"\n", 1)[1]
        assert dispatch(["synth", "--config", cfg, "--seed", "123"]) == 0
        second = (out / "ridership.csv").read_bytes().split(b"\n", 1)[1]
        assert first != second

    def test_manifest_records_provenance(self, workspace):
        cfg, out = workspace
        dispatch(["synth", "--config", cfg])
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["tool_version"] == __version__


class TestPipeline:
    def run_synth_train(self, cfg):
        assert dispatch(["synth", "--config", cfg]) == 0
        assert dispatch(["train", "--config", cfg]) == 0

    def test_ingest_writes_grid(self, workspace):
        cfg, out = workspace
        dispatch(["synth", "--config", cfg])
        assert dispatch(["ingest", "--config", cfg]) == 0
        lines = read_lines(out / "grid.csv")
        assert lines[0].startswith("# transitnet")
        assert lines[1].split(",")[0] == "timestamp"
        assert len(lines) > 100

    def test_train_then_evaluate(self, workspace):
        cfg, out = workspace
        self.run_synth_train(cfg)
        assert (out / "model.ckpt").exists()
        log = read_lines(out / "training_log.csv")
        assert log[1] == "epoch,train_mse,val_mse,seconds"
        assert dispatch(["evaluate", "--config", cfg]) == 0
        scores = read_lines(out / "scores.csv")
        assert scores[1] == "dataset,metric,scope,station_id_or_ALL,value"
        r2_rows = [l for l in scores if l.startswith("test,r2,overall,ALL,")]
        assert len(r2_rows) == 1
        float(r2_rows[0].rsplit(",", 1)[1])  # value parses

    def test_evaluate_without_checkpoint_is_data_error(self, workspace):
        cfg, _ = workspace
        dispatch(["synth", "--config", cfg])
        assert dispatch(["evaluate", "--config", cfg]) == 2

    def test_forecast_row_count(self, workspace):
        cfg, out = workspace
        self.run_synth_train(cfg)
        assert dispatch(["forecast", "--config", cfg, "--horizon", "12"]) == 0
        lines = read_lines(out / "forecast.csv")
        data = lines[2:]
        assert len(data) == 12 * 6  # horizon x stations
        assert {row.rsplit(",", 1)[1] for row in data} == {str(k) for k in range(1, 13)}

    def test_forecast_bad_start_time_is_data_error(self, workspace):
        cfg, _ = workspace
        self.run_synth_train(cfg)
        assert dispatch(["forecast", "--config", cfg,
                         "--start", "2024-01-15T03:00:00"]) == 2

    def test_lag_curve_rows(self, workspace):
        cfg, out = workspace
        self.run_synth_train(cfg)
        assert dispatch(["lag-curve", "--config", cfg]) == 0
        lines = read_lines(out / "lag_curve.csv")
        assert lines[1] == "lag,maape,r2"
        assert len(lines) == 2 + 12  # lags 1 through 12

    def test_cluster_outputs(self, workspace):
        cfg, out = workspace
        dispatch(["synth", "--config", cfg])
        extra = "[cluster]\nk = 2\n"
        cfg2 = write_config(out.parent / "cluster.toml", out.as_posix(), extra=extra)
        assert dispatch(["cluster", "--config", cfg2]) == 0
        lines = read_lines(out / "clusters.csv")
        assert lines[1] == "station_id,cluster"
        assert len(lines) == 2 + 6
        assert (out / "cluster_centroids.csv").exists()

    def test_inspect_checkpoint_summary(self, workspace, capsys):
        cfg, _ = workspace
        self.run_synth_train(cfg)
        assert dispatch(["inspect-checkpoint", "--config", cfg]) == 0
        printed = capsys.readouterr().out
        assert "variant=v1" in printed and "stations=6" in printed

    def test_outputs_carry_header_line(self, workspace):
        cfg, out = workspace
        self.run_synth_train(cfg)
        dispatch(["evaluate", "--config", cfg])
        rc = load_run_config(cfg, None)
        for name in ("training_log.csv", "scores.csv", "ridership.csv"):
            assert read_lines(out / name)[0] == rc.header()

    def test_no_files_outside_output_dir(self, workspace, tmp_path):
        cfg, out = workspace
        os.makedirs(out, exist_ok=True)
        before = set(os.listdir(tmp_path))
        self.run_synth_train(cfg)
        after = set(os.listdir(tmp_path))
        assert before == after  # only contents of out/ changed
