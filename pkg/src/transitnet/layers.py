"""Model building blocks: decomposition, GRU, attention edge weights,
neighbor aggregation and feed-forward layers.

All layers operate on stacked node rows, so a batch of samples can be run
as one forward pass by stacking each sample's stations along axis 0 and
offsetting the edge lists accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError
from .graph import TransitGraph


@dataclass
class DecompositionConfig:
    kernel: int = 5

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"decomposition kernel must be odd and >= 1, got {self.kernel}")


def decompose(x_recent: Tensor | np.ndarray, config: DecompositionConfig) -> tuple[Tensor, Tensor]:
    """Split a recent window into trend (edge-padded moving average) and
    residual; trend + residual reconstructs the input exactly."""
    x = x_recent if isinstance(x_recent, Tensor) else Tensor(x_recent)
    trend = ad.avg_pool1d(x, config.kernel)
    # The residual is literally the rounded difference, so the reconstruction
    # error (x - trend) - residual is exactly zero element-wise.
    residual = ad.sub(x, trend)
    return trend, residual


@dataclass
class GruParams:
    """Gate parameters; inputs enter as rows, so weights are (in, hidden)."""

    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    def __post_init__(self):
        hidden = self.u_z.shape[0]
        in_dim = self.w_z.shape[0]
        expect = {
            "w_z": (in_dim, hidden), "u_z": (hidden, hidden), "b_z": (hidden,),
            "w_r": (in_dim, hidden), "u_r": (hidden, hidden), "b_r": (hidden,),
            "w_h": (in_dim, hidden), "u_h": (hidden, hidden), "b_h": (hidden,),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"GruParams.{name}: expected {shape}, "
                                     f"got {getattr(self, name).shape}")

    @property
    def hidden(self) -> int:
        return self.u_z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_z.shape[0]

    def named(self, prefix: str):
        for name in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"):
            yield f"{prefix}.{name}", getattr(self, name)


def gru_step(x_t: Tensor, h_prev: Tensor, params: GruParams) -> Tensor:
    """One recurrent update; rows are independent (weight sharing)."""
    z = ad.sigmoid(x_t @ params.w_z + h_prev @ params.u_z + params.b_z)
    r = ad.sigmoid(x_t @ params.w_r + h_prev @ params.u_r + params.b_r)
    h_cand = ad.tanh(x_t @ params.w_h + r * (h_prev @ params.u_h) + params.b_h)
    one_minus_z = ad.sub(1.0, z)
    return one_minus_z * h_prev + z * h_cand


def gru_sequence(x: Tensor | np.ndarray, stack: list[GruParams]) -> Tensor:
    """Run a stacked GRU over a (rows, L) sequence of scalar inputs.

    The first layer consumes one column per step; each further layer
    consumes the hidden sequence of the layer below.  Returns the top
    layer's final hidden state, (rows, hidden).  Initial states are zero.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"gru_sequence: expected (rows, L), got {x.shape}")
    if not stack:
        raise ConfigError("gru_sequence: empty stack")
    length = x.shape[1]
    inputs: list[Tensor] = [ad.slice_cols(x, t, t + 1) for t in range(length)]
    h_final = None
    for params in stack:
        h = Tensor(np.zeros((x.shape[0], params.hidden)))
        outputs = []
        for x_t in inputs:
            h = gru_step(x_t, h, params)
            outputs.append(h)
        inputs = outputs
        h_final = h
    return h_final


def gru_over_features(features: list[Tensor], stack: list[GruParams]) -> Tensor:
    """Stacked GRU over an explicit sequence of (rows, d) feature blocks."""
    if not stack:
        raise ConfigError("gru_over_features: empty stack")
    inputs = features
    h_final = None
    for params in stack:
        h = Tensor(np.zeros((inputs[0].shape[0], params.hidden)))
        outputs = []
        for x_t in inputs:
            h = gru_step(x_t, h, params)
            outputs.append(h)
        inputs = outputs
        h_final = h
    return h_final


@dataclass
class GatParams:
    """Single-head attention: w maps a history row to d features, a scores
    a concatenated receiver/sender pair."""

    w: Tensor            # (N_h, d)
    a: Tensor            # (2d,)
    alpha: float = ad.LEAKY_RELU_ALPHA

    def __post_init__(self):
        if self.a.shape != (2 * self.w.shape[1],):
            raise DimensionError(f"GatParams: attention vector {self.a.shape} "
                                 f"does not match 2x feature dim {self.w.shape[1]}")

    def named(self, prefix: str):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.a", self.a


@dataclass
class EdgeWeights:
    """Attention weights per (receiver, sender) pair, grouped by receiver.

    ``receivers``/``senders`` are raw node row indices into the stacked node
    axis; weights within each receiver's group sum to one.
    """

    receivers: np.ndarray
    senders: np.ndarray
    values: Tensor       # (E,)

    def as_dict(self) -> dict[tuple[int, int], float]:
        vals = self.values.data
        return {(int(i), int(j)): float(vals[e])
                for e, (i, j) in enumerate(zip(self.receivers, self.senders))}


def _edge_arrays(graph: TransitGraph, batch: int) -> tuple[np.ndarray, np.ndarray]:
    recv, send = graph.edge_pairs()
    if batch == 1:
        return recv, send
    n = graph.n_stations
    offs = np.repeat(np.arange(batch) * n, recv.size)
    return np.tile(recv, batch) + offs, np.tile(send, batch) + offs


def gat_edge_weights(x_hist: Tensor | np.ndarray, graph: TransitGraph,
                     params: GatParams, batch: int = 1) -> EdgeWeights:
    """Input-dependent edge weights, softmax-normalized per receiving node."""
    for i in range(graph.n_stations):
        if not graph.neighbors(i):
            raise ContractError(f"node {i} has an empty neighborhood and no self-loop")
    x = x_hist if isinstance(x_hist, Tensor) else Tensor(x_hist)
    n_rows = graph.n_stations * batch
    if x.shape[0] != n_rows:
        raise DimensionError(f"gat_edge_weights: {x.shape[0]} rows for {n_rows} nodes")
    receivers, senders = _edge_arrays(graph, batch)
    z = x @ params.w                                   # (rows, d)
    d = params.w.shape[1]
    a_recv = ad.reshape(ad.slice_cols(ad.reshape(params.a, (1, 2 * d)), 0, d), (d,))
    a_send = ad.reshape(ad.slice_cols(ad.reshape(params.a, (1, 2 * d)), d, 2 * d), (d,))
    scores = ad.gather_rows(z, receivers) @ a_recv + ad.gather_rows(z, senders) @ a_send
    scores = ad.leaky_relu(scores, params.alpha)
    weights = ad.segment_softmax(scores, receivers, n_rows)
    return EdgeWeights(receivers=receivers, senders=senders, values=weights)


@dataclass
class KgnnParams:
    """Self transform plus weighted neighbor-sum transform."""

    w1: Tensor
    w2: Tensor
    activation: str = "tanh"   # "tanh" or "identity"

    def __post_init__(self):
        if self.w1.shape != self.w2.shape or self.w1.shape[0] != self.w1.shape[1]:
            raise DimensionError(f"KgnnParams: w1 {self.w1.shape} and w2 {self.w2.shape} "
                                 "must be square and equal")
        if self.activation not in ("tanh", "identity"):
            raise ConfigError(f"KgnnParams: unknown activation '{self.activation}'")

    def named(self, prefix: str):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.w2", self.w2


def kgnn_aggregate(h: Tensor, graph: TransitGraph, edge_weights: EdgeWeights,
                   params: KgnnParams) -> Tensor:
    """Per-node update: self transform plus attention-weighted neighbor sum."""
    n_rows = h.shape[0]
    batch, rem = divmod(n_rows, graph.n_stations)
    pairs_per_sample = sum(len(graph.neighbors(i)) for i in range(graph.n_stations))
    if rem or edge_weights.receivers.size != pairs_per_sample * batch:
        raise ContractError("kgnn_aggregate: edge weights do not cover the node rows")
    if h.shape[1] != params.w1.shape[0]:
        raise DimensionError(f"kgnn_aggregate: features {h.shape[1]} vs "
                             f"transform {params.w1.shape}")
    sent = ad.gather_rows(h, edge_weights.senders)                       # (E, d)
    weighted = sent * ad.reshape(edge_weights.values, (-1, 1))
    neighbor_sum = ad.segment_sum(weighted, edge_weights.receivers, n_rows)
    out = h @ params.w1 + neighbor_sum @ params.w2
    if params.activation == "tanh":
        out = ad.tanh(out)
    return out


@dataclass
class FfnnParams:
    """Affine chain with LeakyReLU between layers, identity at the end."""

    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("FfnnParams: need matching weight/bias lists")
        for k in range(len(self.weights) - 1):
            if self.weights[k].shape[1] != self.weights[k + 1].shape[0]:
                raise DimensionError(f"FfnnParams: layer {k} output "
                                     f"{self.weights[k].shape[1]} does not chain")

    def named(self, prefix: str):
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"{prefix}.w{k}", w
            yield f"{prefix}.b{k}", b


def ffnn_forward(x: Tensor | np.ndarray, params: FfnnParams) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise DimensionError(f"ffnn_forward: input width {x.shape[-1]} vs "
                             f"first layer {params.weights[0].shape[0]}")
    out = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        out = out @ w + b
        if k != last:
            out = ad.leaky_relu(out)
    return out
