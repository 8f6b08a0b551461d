"""Loss, Adam optimizer, mini-batch training loop and fine-tuning."""

from __future__ import annotations

import copy
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, mean_all, sub
from .data import SampleWindow
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .graph import TransitGraph
from .model import Checkpoint, ModelParams, forward


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle_seed: int = 0
    patience: int = 10
    clip_norm: float = 5.0
    target_train_mse: float | None = None   # optional early exit once reached

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs/batch_size/learning_rate out of range")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.clip_norm <= 0 or self.patience < 0:
            raise ConfigError("clip_norm must be positive and patience >= 0")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def log_lines(self) -> list[str]:
        return [f"{e},{tr:.10g},{vl:.10g},{sec:.3f}"
                for e, (tr, vl, sec) in enumerate(
                    zip(self.train_loss, self.val_loss, self.seconds))]


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = sub(pred, Tensor(target))
    return mean_all(diff * diff)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray],
              state: AdamState, config: TrainConfig) -> None:
    """Standard bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    for name, tensor in params.named_parameters():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adam_step: non-finite gradient for '{name}'")
        m = state.m.setdefault(name, np.zeros_like(tensor.data))
        v = state.v.setdefault(name, np.zeros_like(tensor.data))
        m *= config.beta1
        m += (1 - config.beta1) * g
        v *= config.beta2
        v += (1 - config.beta2) * g * g
        m_hat = m / (1 - config.beta1 ** t)
        v_hat = v / (1 - config.beta2 ** t)
        tensor.data = tensor.data - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most ``max_norm``."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def _batch_arrays(samples: list[SampleWindow]):
    x_recent = np.stack([s.x_recent for s in samples])
    x_hist = np.stack([s.x_hist for s in samples])
    y = np.stack([s.y for s in samples])
    return x_recent, x_hist, y


def evaluate_mse(params: ModelParams, graph: TransitGraph,
                 samples: list[SampleWindow], batch_size: int = 256) -> float:
    """Mean squared error over samples, computed without parameter updates."""
    if not samples:
        return float("nan")
    total, n = 0.0, 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x_recent, x_hist, y = _batch_arrays(chunk)
        pred = forward(params, graph, x_recent, x_hist).data
        total += float(np.sum((pred - y) ** 2))
        n += y.size
    return total / n


def clone_params(params: ModelParams) -> ModelParams:
    clone = copy.deepcopy(params)
    for tensor in clone.tensors():
        tensor.zero_grad()
    return clone


def train(params: ModelParams, samples: list[SampleWindow], graph: TransitGraph,
          config: TrainConfig, val_samples: list[SampleWindow] | None = None,
          metadata: dict | None = None) -> tuple[Checkpoint, TrainHistory]:
    """Mini-batch training with seeded shuffling, gradient clipping and
    early stopping on validation loss.

    Returns the best-validation checkpoint (last epoch if no validation set)
    and the per-epoch history.  On divergence, training stops and the last
    finite checkpoint is preserved.
    """
    if not samples:
        raise ContractError("train: no training samples")
    history = TrainHistory()
    metadata = dict(metadata or {})
    best = clone_params(params)
    best_val = float("inf")
    since_best = 0

    for epoch in range(config.epochs):
        tic = _time.perf_counter()
        order = np.random.default_rng(
            np.random.PCG64(config.shuffle_seed + epoch)).permutation(len(samples))
        epoch_sse, epoch_n = 0.0, 0
        diverged = False
        for start in range(0, len(order), config.batch_size):
            batch = [samples[i] for i in order[start:start + config.batch_size]]
            x_recent, x_hist, y = _batch_arrays(batch)
            params.zero_grad()
            pred = forward(params, graph, x_recent, x_hist)
            loss = mse_loss(pred, y)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                diverged = True
                break
            loss.backward()
            grads = {name: t.grad for name, t in params.named_parameters()
                     if t.grad is not None}
            clip_gradients(grads, config.clip_norm)
            adam_step(params, grads, _adam_state(params), config)
            epoch_sse += loss_val * y.size
            epoch_n += y.size
        if diverged:
            metadata["diverged_at_epoch"] = epoch
            break

        train_mse = epoch_sse / epoch_n
        val_mse = (evaluate_mse(params, graph, val_samples)
                   if val_samples else train_mse)
        history.train_loss.append(train_mse)
        history.val_loss.append(val_mse)
        history.seconds.append(_time.perf_counter() - tic)

        if val_mse < best_val:
            best_val = val_mse
            best = clone_params(params)
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                break
        if config.target_train_mse is not None and train_mse <= config.target_train_mse:
            break

    metadata.update({"epochs_run": len(history.train_loss),
                     "final_train_mse": history.train_loss[-1] if history.train_loss else None,
                     "best_val_mse": best_val if best_val < float("inf") else None,
                     "shuffle_seed": config.shuffle_seed})
    _ADAM_STATES.pop(id(params), None)
    return Checkpoint(params=best, metadata=metadata), history


_ADAM_STATES: dict[int, AdamState] = {}


def _adam_state(params: ModelParams) -> AdamState:
    return _ADAM_STATES.setdefault(id(params), AdamState())


def fine_tune(checkpoint: Checkpoint, samples: list[SampleWindow], graph: TransitGraph,
              config: TrainConfig, val_samples: list[SampleWindow] | None = None
              ) -> tuple[Checkpoint, TrainHistory]:
    """Continue training from a checkpoint; lineage is recorded in metadata."""
    params = clone_params(checkpoint.params)
    if graph.n_stations != params.config.n_stations:
        raise ContractError(f"fine_tune: checkpoint built for "
                            f"{params.config.n_stations} stations, graph has "
                            f"{graph.n_stations}")
    lineage = list(checkpoint.metadata.get("lineage", []))
    lineage.append({"epochs_run": checkpoint.metadata.get("epochs_run"),
                    "best_val_mse": checkpoint.metadata.get("best_val_mse")})
    tuned, history = train(params, samples, graph, config, val_samples,
                           metadata={"lineage": lineage})
    return tuned, history
