"""Iterative long-horizon forecasting built on the one-step model.

Each iteration predicts the next interval, appends the prediction to the
sliding recent window (dropping the oldest column) and fetches the
historical window for the new target from stored data, which is always
available at the 7-day lag.  Predictions circulate in scaled space; the
caller inverts and clamps for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable

import numpy as np

from .data import HISTORY_LAG, RidershipGrid, ScalerParams, invert_scaler
from .errors import ContractError, CoverageError
from .graph import TransitGraph
from .metrics import maape, r_squared
from .model import ModelParams, forward

# A one-step predictor: (x_recent (N, I), x_hist (N, N_h)) -> (N,) scaled.
StepModel = Callable[[np.ndarray, np.ndarray], np.ndarray]


def model_predictor(params: ModelParams, graph: TransitGraph) -> StepModel:
    def predict(x_recent: np.ndarray, x_hist: np.ndarray) -> np.ndarray:
        return forward(params, graph, x_recent, x_hist).data
    return predict


@dataclass
class ForecastBuffer:
    """Sliding input state: observed rows first, generated columns appended
    as iterations progress."""

    recent: np.ndarray                 # (N, I), scaled
    grid: RidershipGrid                # scaled grid used for history lookups
    cursor: int                        # next target row index in the grid
    hist_len: int
    generated: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.recent.ndim != 2:
            raise ContractError("ForecastBuffer: recent window must be 2-D")
        self._recent_len = self.recent.shape[1]

    @property
    def recent_len(self) -> int:
        return self._recent_len

    def advance(self, prediction: np.ndarray) -> None:
        self.recent = np.concatenate([self.recent[:, 1:], prediction[:, None]], axis=1)
        self.generated.append(prediction)
        self.cursor += 1


def buffer_from_grid(grid: RidershipGrid, start_row: int, recent_len: int,
                     hist_len: int) -> ForecastBuffer:
    """Start a buffer whose first target is grid row ``start_row``."""
    if start_row < recent_len:
        raise CoverageError(f"start row {start_row} leaves no full recent window")
    return ForecastBuffer(recent=grid.values[start_row - recent_len:start_row].T.copy(),
                          grid=grid, cursor=start_row, hist_len=hist_len)


def max_feasible_horizon(buffer: ForecastBuffer) -> int:
    """Largest N for which timeline and 7-day history rows exist."""
    grid = buffer.grid
    n = 0
    row = buffer.cursor
    while row < grid.n_rows:
        h_idx = grid.row_of(grid.times[row] - HISTORY_LAG)
        if h_idx is None or h_idx < buffer.hist_len - 1:
            break
        n += 1
        row += 1
    return n


def iterative_forecast(model: StepModel, buffer: ForecastBuffer,
                       horizon: int) -> list[tuple[datetime, np.ndarray]]:
    """Run ``horizon`` one-step predictions, feeding each back as input.

    Returns (target_time, scaled prediction) pairs in order.  The cursor
    follows the grid's concatenated in-service timeline, so horizons crossing
    the nightly gap continue on the next service day.
    """
    if horizon < 1:
        raise ContractError("iterative_forecast: horizon must be >= 1")
    feasible = max_feasible_horizon(buffer)
    if horizon > feasible:
        raise CoverageError(f"horizon {horizon} exceeds historical coverage; "
                            f"max feasible is {feasible}")
    grid = buffer.grid
    out = []
    for _ in range(horizon):
        target_time = grid.times[buffer.cursor]
        h_idx = grid.row_of(target_time - HISTORY_LAG)
        x_hist = grid.values[h_idx - buffer.hist_len + 1:h_idx + 1].T
        prediction = np.asarray(model(buffer.recent, x_hist), dtype=np.float64)
        out.append((target_time, prediction))
        buffer.advance(prediction)
    return out


def lagged_forecast_errors(model: StepModel, scaled_grid: RidershipGrid,
                           raw_grid: RidershipGrid, scaler: ScalerParams | None,
                           recent_len: int, hist_len: int, max_lag: int = 12,
                           start_rows: list[int] | None = None
                           ) -> dict[int, dict[str, float]]:
    """Per-lag pooled scores of the iterative forecaster.

    Every valid start time contributes one forecast per lag; scores are
    computed on unscaled counts (clamped at zero) against observations.
    """
    if start_rows is None:
        start_rows = [row for row in range(recent_len, scaled_grid.n_rows)
                      if max_feasible_horizon(
                          buffer_from_grid(scaled_grid, row, recent_len, hist_len)
                      ) >= max_lag]
    if not start_rows:
        raise CoverageError("no start times support the requested horizon")

    predictions: dict[int, list[np.ndarray]] = {lag: [] for lag in range(1, max_lag + 1)}
    observations: dict[int, list[np.ndarray]] = {lag: [] for lag in range(1, max_lag + 1)}
    for row in start_rows:
        buffer = buffer_from_grid(scaled_grid, row, recent_len, hist_len)
        for lag, (_, pred) in enumerate(iterative_forecast(model, buffer, max_lag), start=1):
            if scaler is not None:
                pred = np.maximum(invert_scaler(pred, scaler), 0.0)
            predictions[lag].append(pred)
            observations[lag].append(raw_grid.values[row + lag - 1])

    scores = {}
    for lag in range(1, max_lag + 1):
        y = np.stack(observations[lag]).ravel()
        y_hat = np.stack(predictions[lag]).ravel()
        scores[lag] = {"maape": maape(y, y_hat), "r2": r_squared(y, y_hat)}
    return scores
