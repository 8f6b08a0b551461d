"""Weekly ridership profiles and Lloyd k-means with k-means++ seeding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import RidershipGrid, require_week_coverage
from .errors import ConfigError


@dataclass
class WeeklyProfile:
    """Mean scaled ridership per weekly slot (weekday x in-service interval),
    per-station max-scaled to [0, 1]."""

    station_id: str
    values: np.ndarray


def weekly_profile(grid: RidershipGrid) -> list[WeeklyProfile]:
    """Average each weekday/time slot over the whole grid, then scale each
    station by its own maximum (all-zero stations stay all-zero)."""
    require_week_coverage(grid)
    slots_per_day = grid.slots_per_day()
    n_slots = 7 * slots_per_day
    start = grid.service_window[0]
    day_start_minutes = start.hour * 60 + start.minute

    sums = np.zeros((n_slots, grid.n_stations))
    counts = np.zeros(n_slots)
    for row, ts in enumerate(grid.times):
        slot_in_day = ((ts.hour * 60 + ts.minute) - day_start_minutes) // grid.interval_minutes
        slot = ts.weekday() * slots_per_day + slot_in_day
        sums[slot] += grid.values[row]
        counts[slot] += 1
    counts[counts == 0] = 1.0
    means = sums / counts[:, None]

    profiles = []
    for k, sid in enumerate(grid.station_ids):
        vec = means[:, k]
        peak = vec.max()
        profiles.append(WeeklyProfile(station_id=sid,
                                      values=vec / peak if peak > 0 else vec.copy()))
    return profiles


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = [points[rng.integers(points.shape[0])]]
    for _ in range(k - 1):
        d2 = np.min(np.stack([np.sum((points - c) ** 2, axis=1) for c in centroids]),
                    axis=0)
        total = d2.sum()
        if total == 0:
            probs = np.full(points.shape[0], 1.0 / points.shape[0])
        else:
            probs = d2 / total
        centroids.append(points[rng.choice(points.shape[0], p=probs)])
    return np.stack(centroids)


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100
           ) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iteration to an assignment fixpoint.

    Returns (assignments, centroids, inertia trace).  Empty clusters are
    repaired by adopting the point farthest from its current centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    if k < 1 or k > points.shape[0]:
        raise ConfigError(f"kmeans: k={k} out of range for {points.shape[0]} points")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng)
    assignments = np.full(points.shape[0], -1, dtype=np.intp)
    inertia_trace: list[float] = []

    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assignments = d2.argmin(axis=1)

        for cluster in range(k):
            if np.any(new_assignments == cluster):
                continue
            residual = d2[np.arange(points.shape[0]), new_assignments]
            farthest = int(residual.argmax())
            new_assignments[farthest] = cluster
            d2[farthest] = 0.0  # keep the repaired point in place next pass

        inertia_trace.append(float(d2[np.arange(points.shape[0]), new_assignments].sum()))
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for cluster in range(k):
            centroids[cluster] = points[assignments == cluster].mean(axis=0)

    return assignments, centroids, inertia_trace


def cluster_stations(profiles: list[WeeklyProfile], k: int = 5, seed: int = 0,
                     max_iter: int = 100) -> tuple[dict[str, int], np.ndarray, list[float]]:
    """Group stations by profile shape; input order does not matter (profiles
    are canonically sorted by station id before seeding)."""
    ordered = sorted(profiles, key=lambda p: p.station_id)
    points = np.stack([p.values for p in ordered])
    assignments, centroids, inertia = kmeans(points, k, seed=seed, max_iter=max_iter)
    return ({p.station_id: int(c) for p, c in zip(ordered, assignments)},
            centroids, inertia)
