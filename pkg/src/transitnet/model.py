"""Forward-pass assembly for both model variants, parameter lifecycle and
binary checkpointing.

V1 runs one GRU stack per input series and aggregates the hidden states
over the graph; V2 aggregates the raw series over the graph first and runs
a single shared GRU stack over the four aggregated blocks.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import ScalerParams
from .errors import ConfigError, DimensionError, IntegrityError
from .graph import TransitGraph
from .layers import (DecompositionConfig, FfnnParams, GatParams, GruParams, KgnnParams,
                     decompose, ffnn_forward, gat_edge_weights, gru_over_features,
                     gru_sequence, kgnn_aggregate)

CHECKPOINT_MAGIC = b"DSTTNCKP"
CHECKPOINT_VERSION = 1

BRANCHES = ("recent", "hist", "trend", "resid")


@dataclass
class ModelConfig:
    variant: str = "v1"              # "v1" or "v2"
    n_stations: int = 10
    recent_len: int = 20
    hist_len: int = 20
    hidden: int = 64
    kernel: int = 5
    gru_layers: int = 1
    ffnn_layers: list[int] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("v1", "v2"):
            raise ConfigError(f"unknown variant '{self.variant}'")
        for name in ("n_stations", "recent_len", "hist_len", "hidden", "gru_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.ffnn_layers:
            if self.variant == "v1":
                self.ffnn_layers = [4 * self.hidden, 2 * self.hidden, 1]
            else:
                self.ffnn_layers = [self.hidden, self.hidden, 1]
        expected_in = 4 * self.hidden if self.variant == "v1" else self.hidden
        if self.ffnn_layers[0] != expected_in or self.ffnn_layers[-1] != 1:
            raise ConfigError(f"ffnn_layers {self.ffnn_layers} must run from "
                              f"{expected_in} to 1 for variant {self.variant}")
        DecompositionConfig(self.kernel)  # validates oddness

    def to_dict(self) -> dict:
        return {"variant": self.variant, "n_stations": self.n_stations,
                "recent_len": self.recent_len, "hist_len": self.hist_len,
                "hidden": self.hidden, "kernel": self.kernel,
                "gru_layers": self.gru_layers, "ffnn_layers": list(self.ffnn_layers),
                "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


@dataclass
class ModelParams:
    config: ModelConfig
    gru: dict[str, list[GruParams]]
    gat: GatParams
    kgnn: dict[str, KgnnParams]
    ffnn: FfnnParams
    scaler: ScalerParams | None = None

    def named_parameters(self):
        """All trainable tensors in a fixed, reproducible order."""
        for branch in sorted(self.gru):
            for depth, bundle in enumerate(self.gru[branch]):
                yield from bundle.named(f"gru.{branch}.{depth}")
        yield from self.gat.named("gat")
        for branch in sorted(self.kgnn):
            yield from self.kgnn[branch].named(f"kgnn.{branch}")
        yield from self.ffnn.named("ffnn")

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors())

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.zero_grad()


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _init_gru_stack(rng: np.random.Generator, input_dim: int, hidden: int,
                    layers: int) -> list[GruParams]:
    stack = []
    for depth in range(layers):
        in_dim = input_dim if depth == 0 else hidden
        kw = {}
        for gate in ("z", "r", "h"):
            kw[f"w_{gate}"] = _uniform(rng, (in_dim, hidden), in_dim)
            kw[f"u_{gate}"] = _uniform(rng, (hidden, hidden), hidden)
            kw[f"b_{gate}"] = _zeros((hidden,))
        stack.append(GruParams(**kw))
    return stack


def init_params(config: ModelConfig, scaler: ScalerParams | None = None) -> ModelParams:
    """Seed-deterministic initialization: weights uniform within the
    1/sqrt(fan_in) bound, biases zero."""
    rng = np.random.default_rng(config.seed)
    hidden = config.hidden

    if config.variant == "v1":
        gru = {b: _init_gru_stack(rng, 1, hidden, config.gru_layers) for b in BRANCHES}
        kgnn = {b: KgnnParams(w1=_uniform(rng, (hidden, hidden), hidden),
                              w2=_uniform(rng, (hidden, hidden), hidden),
                              activation="identity")
                for b in BRANCHES}
    else:
        if config.recent_len != config.hist_len:
            raise ConfigError("v2 requires equal recent and historical window lengths")
        length = config.recent_len
        gru = {"shared": _init_gru_stack(rng, length, hidden, config.gru_layers)}
        kgnn = {b: KgnnParams(w1=_uniform(rng, (length, length), length),
                              w2=_uniform(rng, (length, length), length),
                              activation="tanh")
                for b in BRANCHES}

    gat = GatParams(w=_uniform(rng, (config.hist_len, hidden), config.hist_len),
                    a=_uniform(rng, (2 * hidden,), 2 * hidden))

    weights, biases = [], []
    for w_in, w_out in zip(config.ffnn_layers, config.ffnn_layers[1:]):
        weights.append(_uniform(rng, (w_in, w_out), w_in))
        biases.append(_zeros((w_out,)))
    ffnn = FfnnParams(weights=weights, biases=biases)

    return ModelParams(config=config, gru=gru, gat=gat, kgnn=kgnn, ffnn=ffnn,
                       scaler=scaler)


def _stacked(x, n_stations: int, length: int, name: str) -> tuple[Tensor, int]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != n_stations or arr.shape[2] != length:
        raise DimensionError(f"{name}: expected (batch, {n_stations}, {length}), "
                             f"got {arr.shape}")
    batch = arr.shape[0]
    return Tensor(arr.reshape(batch * n_stations, length)), batch


def forward(params: ModelParams, graph: TransitGraph, x_recent, x_hist) -> Tensor:
    """Predict one scaled value per station.

    Inputs may be single samples (N, L) or batches (B, N, L); the output is
    (N,) or (B, N) accordingly.
    """
    cfg = params.config
    if graph.n_stations != cfg.n_stations:
        raise DimensionError(f"graph has {graph.n_stations} stations, "
                             f"model expects {cfg.n_stations}")
    single = np.asarray(x_recent).ndim == 2
    xo, batch = _stacked(x_recent, cfg.n_stations, cfg.recent_len, "x_recent")
    xh, batch_h = _stacked(x_hist, cfg.n_stations, cfg.hist_len, "x_hist")
    if batch != batch_h:
        raise DimensionError("x_recent and x_hist batch sizes differ")

    xt, xr = decompose(xo, DecompositionConfig(cfg.kernel))
    edge_weights = gat_edge_weights(xh, graph, params.gat, batch=batch)
    series = {"recent": xo, "hist": xh, "trend": xt, "resid": xr}

    if cfg.variant == "v1":
        branch_out = []
        for b in BRANCHES:
            h = gru_sequence(series[b], params.gru[b])
            branch_out.append(kgnn_aggregate(h, graph, edge_weights, params.kgnn[b]))
        features = ad.concat(branch_out, axis=1)
    else:
        blocks = [kgnn_aggregate(series[b], graph, edge_weights, params.kgnn[b])
                  for b in BRANCHES]
        features = gru_over_features(blocks, params.gru["shared"])

    out = ffnn_forward(features, params.ffnn)
    shape = (cfg.n_stations,) if single else (batch, cfg.n_stations)
    return ad.reshape(out, shape)


def forward_v1(x_recent, x_hist, graph: TransitGraph, params: ModelParams) -> Tensor:
    if params.config.variant != "v1":
        raise ConfigError("forward_v1 called with non-v1 parameters")
    return forward(params, graph, x_recent, x_hist)


def forward_v2(x_recent, x_hist, graph: TransitGraph, params: ModelParams) -> Tensor:
    if params.config.variant != "v2":
        raise ConfigError("forward_v2 called with non-v2 parameters")
    return forward(params, graph, x_recent, x_hist)


@dataclass
class Checkpoint:
    params: ModelParams
    metadata: dict = field(default_factory=dict)


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Write the versioned binary container with a trailing CRC32."""
    params = checkpoint.params
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in params.named_parameters():
        raw = tensor.data.astype("<f8").tobytes()
        manifest.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    scaler = None
    if params.scaler is not None:
        scaler = {"mins": params.scaler.mins.tolist(),
                  "maxs": params.scaler.maxs.tolist()}
    header = {"config": params.config.to_dict(), "metadata": checkpoint.metadata,
              "scaler": scaler, "tensors": manifest}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = struct.pack("<I", len(header_bytes)) + header_bytes + b"".join(blobs)
    body = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
    body += struct.pack("<Q", len(payload)) + payload
    body += struct.pack("<I", zlib.crc32(body))
    with open(path, "wb") as fh:
        fh.write(body)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        body = fh.read()
    if len(body) < 24 or body[:8] != CHECKPOINT_MAGIC:
        raise IntegrityError("not a model checkpoint (bad magic)")
    stored_crc = struct.unpack("<I", body[-4:])[0]
    if zlib.crc32(body[:-4]) != stored_crc:
        raise IntegrityError("checkpoint checksum mismatch")
    version = struct.unpack("<I", body[8:12])[0]
    if version != CHECKPOINT_VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version}")
    payload_len = struct.unpack("<Q", body[12:20])[0]
    payload = body[20:20 + payload_len]
    header_len = struct.unpack("<I", payload[:4])[0]
    header = json.loads(payload[4:4 + header_len].decode("utf-8"))
    blob = payload[4 + header_len:]

    config = ModelConfig.from_dict(header["config"])
    scaler = None
    if header["scaler"] is not None:
        scaler = ScalerParams(mins=np.asarray(header["scaler"]["mins"]),
                              maxs=np.asarray(header["scaler"]["maxs"]))
    params = init_params(config, scaler=scaler)
    tensors = dict(params.named_parameters())
    for entry in header["tensors"]:
        tensor = tensors.get(entry["name"])
        if tensor is None:
            raise IntegrityError(f"checkpoint names unknown tensor '{entry['name']}'")
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        data = np.frombuffer(blob, dtype="<f8", count=size, offset=start)
        tensor.data = data.reshape(entry["shape"]).astype(np.float64)
    return Checkpoint(params=params, metadata=header["metadata"])
