"""Command-line entry point wiring data preparation, model preparation and
application phases into reproducible commands.

Configuration lives in a TOML file with dotted sections; every command
accepts ``--config`` plus a ``--seed`` override, and writes artifacts only
under the configured output directory.  CSV artifacts start with a comment
line carrying the tool version, config hash and seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from datetime import date, datetime

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .clustering import cluster_stations, weekly_profile
from .data import (aggregate, apply_scaler, fit_scaler, invert_scaler, load_records,
                   make_windows, samples_in_range, split_periods)
from .errors import (ConfigError, ContractError, CoverageError, DataError,
                     IntegrityError, NumericError, TransitNetError)
from .forecasting import (buffer_from_grid, iterative_forecast, lagged_forecast_errors,
                          max_feasible_horizon, model_predictor)
from .graph import build_graph, load_edges, load_stations
from .metrics import maape_ratio, score_predictions
from .model import (Checkpoint, ModelConfig, forward, init_params, load_checkpoint,
                    save_checkpoint)
from .synth import SynthConfig, generate, write_dataset
from .training import TrainConfig, train

COMMANDS = ("synth", "ingest", "train", "evaluate", "forecast", "lag-curve",
            "cluster", "inspect-checkpoint")


@dataclass
class RunConfig:
    raw: dict
    seed: int
    output_dir: str
    paths: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        canon = json.dumps({"config": self.raw, "seed": self.seed}, sort_keys=True,
                           default=str)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]

    def header(self) -> str:
        return f"# transitnet {__version__} config_hash={self.config_hash} seed={self.seed}"

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def path(self, role: str) -> str:
        p = self.paths.get(role)
        if not p:
            raise ConfigError(f"config is missing paths.{role}")
        return p


def load_run_config(path: str, seed_override: int | None) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    seed = int(raw.get("seed", 0)) if seed_override is None else seed_override
    paths = dict(raw.get("paths", {}))
    output_dir = paths.get("output_dir", "out")
    return RunConfig(raw=raw, seed=seed, output_dir=output_dir, paths=paths)


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, name)


def _write_csv(cfg: RunConfig, name: str, header_row: list[str], rows) -> str:
    path = _out(cfg, name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(cfg.header() + "\n")
        w = csv.writer(fh)
        w.writerow(header_row)
        w.writerows(rows)
    return path


def _load_graph(cfg: RunConfig):
    stations = load_stations(cfg.path("stations"))
    return build_graph(stations, load_edges(cfg.path("edges")), self_loops=True)


def _load_grid(cfg: RunConfig, graph):
    records = load_records(cfg.path("ridership"))
    return aggregate(records, graph)


def _periods(cfg: RunConfig) -> dict[str, tuple[date, date]]:
    out = {}
    for name, span in cfg.section("periods").items():
        if len(span) != 2:
            raise ConfigError(f"period '{name}' must be [start, end]")
        a, b = (date.fromisoformat(str(s)) for s in span)
        out[name] = (a, b)
    if "train" not in out:
        raise ConfigError("config must define periods.train")
    return out


def _model_config(cfg: RunConfig, n_stations: int) -> ModelConfig:
    sec = cfg.section("model")
    return ModelConfig(variant=sec.get("variant", "v1"),
                       n_stations=n_stations,
                       recent_len=int(sec.get("recent_len", 20)),
                       hist_len=int(sec.get("hist_len", 20)),
                       hidden=int(sec.get("hidden", 64)),
                       kernel=int(sec.get("kernel", 5)),
                       gru_layers=int(sec.get("gru_layers", 1)),
                       ffnn_layers=list(sec.get("ffnn_layers", [])),
                       seed=cfg.seed)


def _train_config(cfg: RunConfig) -> TrainConfig:
    sec = cfg.section("train")
    return TrainConfig(epochs=int(sec.get("epochs", 50)),
                       batch_size=int(sec.get("batch_size", 64)),
                       learning_rate=float(sec.get("learning_rate", 1e-3)),
                       shuffle_seed=cfg.seed,
                       patience=int(sec.get("patience", 10)),
                       clip_norm=float(sec.get("clip_norm", 5.0)),
                       target_train_mse=sec.get("target_train_mse"))


def _prepared(cfg: RunConfig):
    """Common data preparation: graph, raw grid, scaler, scaled grid, windows."""
    graph = _load_graph(cfg)
    grid = _load_grid(cfg, graph)
    periods = _periods(cfg)
    train_start, train_end = periods["train"]
    dates = np.array([t.date() for t in grid.times])
    train_mask = (dates >= train_start) & (dates <= train_end)
    if not train_mask.any():
        raise DataError("training period contains no grid rows")
    scaler = fit_scaler(grid.values[train_mask])
    scaled = grid.with_values(apply_scaler(grid.values, scaler))
    model_cfg = _model_config(cfg, graph.n_stations)
    samples, skipped = make_windows(scaled, model_cfg.recent_len, model_cfg.hist_len)
    return graph, grid, scaled, scaler, periods, model_cfg, samples, skipped


def cmd_synth(cfg: RunConfig, args) -> int:
    sec = cfg.section("synth")
    synth_cfg = SynthConfig(
        n_stations=int(sec.get("stations", 10)),
        days=int(sec.get("days", 28)),
        start=date.fromisoformat(str(sec.get("start", "2024-01-01"))),
        seed=cfg.seed,
        noise_sigma=float(sec.get("noise_sigma", 0.0)),
        base_level=float(sec.get("base_level", 120.0)),
        archetypes=tuple(sec.get("archetypes", ["two_peak", "morning_peak"])))
    dataset = generate(synth_cfg)
    dataset.manifest["tool_version"] = __version__
    dataset.manifest["config_hash"] = cfg.config_hash
    paths = write_dataset(dataset, cfg.output_dir, header=cfg.header())
    print(f"synth: {len(dataset.records)} records for {synth_cfg.n_stations} stations "
          f"over {synth_cfg.days} days -> {paths['ridership']}")
    return 0


def cmd_ingest(cfg: RunConfig, args) -> int:
    graph = _load_graph(cfg)
    grid = _load_grid(cfg, graph)
    rows = ([ts.isoformat()] + [f"{v:g}" for v in grid.values[i]]
            for i, ts in enumerate(grid.times))
    path = _write_csv(cfg, "grid.csv", ["timestamp"] + grid.station_ids, rows)
    print(f"ingest: {grid.n_rows} rows x {grid.n_stations} stations "
          f"({graph.edge_count()} edges) -> {path}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    graph, _, _, scaler, periods, model_cfg, samples, skipped = _prepared(cfg)
    train_start, train_end = periods["train"]
    train_samples = samples_in_range(samples, train_start, train_end)
    if not train_samples:
        raise DataError("no training samples with full window coverage")
    val_fraction = float(cfg.section("train").get("val_fraction", 0.1))
    n_val = int(len(train_samples) * val_fraction)
    val_samples = train_samples[-n_val:] if n_val else []
    fit_samples = train_samples[:-n_val] if n_val else train_samples

    params = init_params(model_cfg, scaler=scaler)
    checkpoint, history = train(params, fit_samples, graph, _train_config(cfg),
                                val_samples or None,
                                metadata={"tool_version": __version__,
                                          "config_hash": cfg.config_hash,
                                          "seed": cfg.seed})
    ckpt_path = _out(cfg, "model.ckpt")
    save_checkpoint(checkpoint, ckpt_path)
    log_path = _out(cfg, "training_log.csv")
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(cfg.header() + "\n")
        fh.write("epoch,train_mse,val_mse,seconds\n")
        fh.write("\n".join(history.log_lines()) + "\n")
    final = history.train_loss[-1] if history.train_loss else float("nan")
    print(f"train: {len(fit_samples)} samples ({skipped} skipped), "
          f"{len(history.train_loss)} epochs, final train MSE {final:.6g} "
          f"-> {ckpt_path}")
    return 0


def _load_model(cfg: RunConfig) -> Checkpoint:
    ckpt_path = cfg.paths.get("checkpoint") or _out(cfg, "model.ckpt")
    return load_checkpoint(ckpt_path)


def cmd_evaluate(cfg: RunConfig, args) -> int:
    graph, grid, scaled, scaler, periods, model_cfg, samples, _ = _prepared(cfg)
    checkpoint = _load_model(cfg)
    params = checkpoint.params
    report_rows = []
    names = [args.period] if args.period else [n for n in periods if n != "train"] or ["train"]
    for name in names:
        if name not in periods:
            raise ConfigError(f"unknown period '{name}'")
        start, end = periods[name]
        subset = samples_in_range(samples, start, end)
        if not subset:
            raise DataError(f"period '{name}' has no samples with full coverage")
        preds, targets, times = [], [], []
        for chunk_start in range(0, len(subset), 256):
            chunk = subset[chunk_start:chunk_start + 256]
            x_recent = np.stack([s.x_recent for s in chunk])
            x_hist = np.stack([s.x_hist for s in chunk])
            scaled_pred = forward(params, graph, x_recent, x_hist).data
            preds.append(np.maximum(invert_scaler(scaled_pred, scaler), 0.0))
            targets.append(np.stack([grid.values[s.target_row] for s in chunk]))
            times.extend(s.target_time for s in chunk)
        report = score_predictions(name, graph.station_ids,
                                   np.concatenate(targets), np.concatenate(preds), times)
        report_rows.extend(report.csv_rows())
        print(f"evaluate[{name}]: n={report.n_samples} R2={report.r2:.4f} "
              f"MAAPE={report.maape:.4f}")
    path = _write_csv(cfg, "scores.csv",
                      ["dataset", "metric", "scope", "station_id_or_ALL", "value"],
                      report_rows)
    print(f"evaluate: report -> {path}")
    return 0


def cmd_forecast(cfg: RunConfig, args) -> int:
    graph, _, scaled, scaler, periods, model_cfg, _, _ = _prepared(cfg)
    checkpoint = _load_model(cfg)
    horizon = args.horizon or int(cfg.section("forecast").get("horizon", 12))
    if args.start:
        start_time = datetime.fromisoformat(args.start)
        start_row = scaled.row_of(start_time)
        if start_row is None:
            raise DataError(f"start time {args.start} is not on the grid")
    else:
        start_row = next((row for row in range(model_cfg.recent_len, scaled.n_rows)
                          if max_feasible_horizon(buffer_from_grid(
                              scaled, row, model_cfg.recent_len, model_cfg.hist_len))
                          >= horizon), None)
        if start_row is None:
            raise CoverageError("no start row supports the requested horizon")
    buffer = buffer_from_grid(scaled, start_row, model_cfg.recent_len,
                              model_cfg.hist_len)
    predictor = model_predictor(checkpoint.params, graph)
    steps = iterative_forecast(predictor, buffer, horizon)
    rows = []
    for lag, (ts, pred) in enumerate(steps, start=1):
        counts = np.maximum(invert_scaler(pred, scaler), 0.0)
        for sid, value in zip(graph.station_ids, counts):
            rows.append([ts.isoformat(), sid, f"{value:.4f}", lag])
    path = _write_csv(cfg, "forecast.csv",
                      ["target_time", "station_id", "prediction", "lag"], rows)
    print(f"forecast: horizon {horizon} from {scaled.times[start_row].isoformat()} "
          f"-> {path} ({len(rows)} rows)")
    return 0


def cmd_lag_curve(cfg: RunConfig, args) -> int:
    graph, grid, scaled, scaler, periods, model_cfg, _, _ = _prepared(cfg)
    checkpoint = _load_model(cfg)
    max_lag = int(cfg.section("forecast").get("max_lag", 12))
    max_starts = int(cfg.section("forecast").get("lag_starts", 40))
    eval_names = [args.period] if args.period else [n for n in periods if n != "train"]
    if not eval_names:
        raise ConfigError("lag-curve needs a non-train period")
    name = eval_names[0]
    start, end = periods[name]
    dates = np.array([t.date() for t in scaled.times])
    candidates = [row for row in np.flatnonzero((dates >= start) & (dates <= end))
                  if row >= model_cfg.recent_len
                  and max_feasible_horizon(buffer_from_grid(
                      scaled, int(row), model_cfg.recent_len, model_cfg.hist_len)) >= max_lag]
    if not candidates:
        raise CoverageError(f"period '{name}' has no feasible forecast starts")
    stride = max(1, len(candidates) // max_starts)
    starts = [int(r) for r in candidates[::stride]][:max_starts]
    predictor = model_predictor(checkpoint.params, graph)
    scores = lagged_forecast_errors(predictor, scaled, grid, scaler,
                                    model_cfg.recent_len, model_cfg.hist_len,
                                    max_lag=max_lag, start_rows=starts)
    rows = [[lag, f"{s['maape']:.6f}", f"{s['r2']:.6f}"]
            for lag, s in sorted(scores.items())]
    path = _write_csv(cfg, "lag_curve.csv", ["lag", "maape", "r2"], rows)
    ratio = maape_ratio({lag: s["maape"] for lag, s in scores.items()})
    print(f"lag-curve[{name}]: {len(starts)} starts, MAAPE ratio 12/1 = "
          f"{ratio:.4f} -> {path}")
    return 0


def cmd_cluster(cfg: RunConfig, args) -> int:
    graph = _load_graph(cfg)
    grid = _load_grid(cfg, graph)
    k = int(cfg.section("cluster").get("k", 5))
    profiles = weekly_profile(grid)
    assignments, centroids, inertia = cluster_stations(profiles, k=k, seed=cfg.seed)
    path = _write_csv(cfg, "clusters.csv", ["station_id", "cluster"],
                      sorted(assignments.items()))
    _write_csv(cfg, "cluster_centroids.csv",
               ["cluster"] + [f"slot{j}" for j in range(centroids.shape[1])],
               ([c] + [f"{v:.6f}" for v in centroids[c]] for c in range(k)))
    print(f"cluster: {len(assignments)} stations into {k} groups, "
          f"final inertia {inertia[-1]:.4f} -> {path}")
    return 0


def cmd_inspect_checkpoint(cfg: RunConfig, args) -> int:
    checkpoint = _load_model(cfg)
    params = checkpoint.params
    ckpt_path = cfg.paths.get("checkpoint") or _out(cfg, "model.ckpt")
    size = os.path.getsize(ckpt_path)
    print(f"inspect-checkpoint: variant={params.config.variant} "
          f"stations={params.config.n_stations} hidden={params.config.hidden} "
          f"params={params.count()} size={size}B "
          f"metadata={json.dumps(checkpoint.metadata, sort_keys=True)}")
    return 0


HANDLERS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "forecast": cmd_forecast,
    "lag-curve": cmd_lag_curve,
    "cluster": cmd_cluster,
    "inspect-checkpoint": cmd_inspect_checkpoint,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transitnet",
                                     description="Station-level ridership forecasting")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--threads", type=int, default=1, help="worker count cap")
    parser.add_argument("--period", default=None, help="named period to evaluate")
    parser.add_argument("--horizon", type=int, default=None, help="forecast steps")
    parser.add_argument("--start", default=None, help="forecast start time (ISO-8601)")
    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = load_run_config(args.config, args.seed)
        return HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CoverageError, ContractError, IntegrityError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
