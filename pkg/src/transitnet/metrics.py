"""Evaluation metrics and analyses: R^2, arctangent percentage error,
peak-hour segmentation, challenge-station identification and the
persistence baseline."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, time

import numpy as np

from .data import SampleWindow
from .errors import ContractError, DataError

PEAK_WINDOWS = ((time(6, 0), time(10, 0)), (time(17, 0), time(21, 0)))


def r_squared(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Coefficient of determination; may be negative for poor fits."""
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape or y.size < 2:
        raise ContractError("r_squared: need two equal-length vectors of size >= 2")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DataError("r_squared: target has zero variance")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


def maape_terms(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """Per-element arctangent absolute percentage errors.

    Zero targets: the term is 0 when the prediction is also 0, else pi/2
    (the arctangent limit of an infinite percentage error).
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape or y.size < 1:
        raise ContractError("maape: need two equal-length non-empty vectors")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.arctan(np.abs((y - y_hat) / y))
    zero_y = y == 0
    terms[zero_y & (y_hat == 0)] = 0.0
    terms[zero_y & (y_hat != 0)] = np.pi / 2
    return terms


def maape(y: np.ndarray, y_hat: np.ndarray) -> float:
    return float(maape_terms(y, y_hat).mean())


def peak_mask(timestamps: list[datetime]) -> np.ndarray:
    """True where the time of day falls in 06:00-10:00 or 17:00-21:00
    (right-open)."""
    out = np.zeros(len(timestamps), dtype=bool)
    for k, ts in enumerate(timestamps):
        tod = ts.time()
        out[k] = any(lo <= tod < hi for lo, hi in PEAK_WINDOWS)
    return out


def maape_ratio(per_lag: dict[int, float]) -> float:
    """Error growth from the 1-interval to the 12-interval horizon."""
    if 1 not in per_lag or 12 not in per_lag:
        raise ContractError("maape_ratio: lags 1 and 12 required")
    if per_lag[1] == 0.0:
        raise DataError("maape_ratio: lag-1 score is zero")
    return per_lag[12] / per_lag[1]


def challenge_stations(r2_by_station: dict[str, float]) -> set[str]:
    """Stations strictly below the 20th percentile of per-station R^2."""
    if len(r2_by_station) < 5:
        raise ContractError("challenge_stations: need at least 5 stations")
    scores = np.array(list(r2_by_station.values()))
    cutoff = np.percentile(scores, 20, method="linear")
    return {sid for sid, score in r2_by_station.items() if score < cutoff}


def persistence_baseline(samples: list[SampleWindow], variant: str = "recent") -> np.ndarray:
    """Naive predictor: repeat the last observed (or week-ago) value.

    Returns (n_samples, n_stations) predictions in the samples' value space.
    """
    if variant == "recent":
        return np.stack([s.x_recent[:, -1] for s in samples])
    if variant == "historical":
        return np.stack([s.x_hist[:, -1] for s in samples])
    raise ContractError(f"persistence_baseline: unknown variant '{variant}'")


@dataclass
class ScoreReport:
    dataset: str
    n_samples: int
    r2: float
    maape: float
    peak_maape: float
    nonpeak_maape: float
    r2_by_station: dict[str, float]
    maape_by_station: dict[str, float]

    def csv_rows(self) -> list[list]:
        rows = [
            [self.dataset, "r2", "overall", "ALL", self.r2],
            [self.dataset, "maape", "overall", "ALL", self.maape],
            [self.dataset, "maape", "peak", "ALL", self.peak_maape],
            [self.dataset, "maape", "nonpeak", "ALL", self.nonpeak_maape],
            [self.dataset, "n_samples", "overall", "ALL", self.n_samples],
        ]
        for sid in self.r2_by_station:
            rows.append([self.dataset, "r2", "station", sid, self.r2_by_station[sid]])
            rows.append([self.dataset, "maape", "station", sid, self.maape_by_station[sid]])
        return rows


def score_predictions(dataset: str, station_ids: list[str],
                      y: np.ndarray, y_hat: np.ndarray,
                      timestamps: list[datetime]) -> ScoreReport:
    """Pooled and per-station scores for (n_samples, n_stations) arrays.

    Pooled scores flatten all stations into one vector; the peak/non-peak
    split partitions samples by target time, so the pooled arctangent error
    equals the count-weighted mean of the two segments.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 2 or y.shape[1] != len(station_ids):
        raise ContractError("score_predictions: shape mismatch")
    peaks = peak_mask(timestamps)
    terms = maape_terms(y, y_hat).reshape(y.shape)
    peak_vals = terms[peaks]
    nonpeak_vals = terms[~peaks]
    return ScoreReport(
        dataset=dataset,
        n_samples=y.shape[0],
        r2=r_squared(y, y_hat),
        maape=float(terms.mean()),
        peak_maape=float(peak_vals.mean()) if peak_vals.size else float("nan"),
        nonpeak_maape=float(nonpeak_vals.mean()) if nonpeak_vals.size else float("nan"),
        r2_by_station={sid: r_squared(y[:, k], y_hat[:, k])
                       for k, sid in enumerate(station_ids)},
        maape_by_station={sid: float(terms[:, k].mean())
                          for k, sid in enumerate(station_ids)},
    )
