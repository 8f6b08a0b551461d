"""Synthetic desk-scale ridership networks.

Station archetypes imitate the usual shapes of weekday boarding profiles:
commuter stations with two peaks, residential stations with a single
morning peak, and so on.  Weekends are flat and low for every archetype.
A manifest records each station's archetype for clustering ground truth.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date, time, timedelta

import numpy as np

from .data import DEFAULT_INTERVAL_MINUTES, DEFAULT_SERVICE_WINDOW, RidershipRecord, service_slots
from .errors import ConfigError
from .graph import Station, build_graph

ARCHETYPES = ("two_peak", "morning_peak", "evening_peak", "midday_plateau", "flat")


@dataclass
class SynthConfig:
    n_stations: int = 10
    days: int = 28
    start: date = date(2024, 1, 1)   # a Monday
    seed: int = 0
    noise_sigma: float = 0.0         # multiplicative gaussian noise
    base_level: float = 120.0        # weekday boardings scale per interval
    archetypes: tuple[str, ...] = ("two_peak", "morning_peak")
    interval_minutes: int = DEFAULT_INTERVAL_MINUTES
    service_window: tuple[time, time] = DEFAULT_SERVICE_WINDOW
    extra_edges: int = 3             # chords added on top of the station ring

    def __post_init__(self):
        if self.days < 15:
            raise ConfigError("synthetic dataset needs >= 15 days for weekly alignment")
        bad = [a for a in self.archetypes if a not in ARCHETYPES]
        if bad:
            raise ConfigError(f"unknown archetypes {bad}; valid: {list(ARCHETYPES)}")


@dataclass
class SynthDataset:
    records: list[RidershipRecord]
    stations: list[Station]
    edges: list[tuple[str, str]]
    manifest: dict = field(default_factory=dict)


def _bump(hours: float, center: float, width: float) -> float:
    return math.exp(-0.5 * ((hours - center) / width) ** 2)


def weekday_profile(archetype: str, hours: float) -> float:
    """Relative boarding intensity at a given time of day (decimal hours)."""
    if archetype == "two_peak":
        return 0.15 + _bump(hours, 8.0, 1.2) + 0.9 * _bump(hours, 18.0, 1.3)
    if archetype == "morning_peak":
        return 0.1 + 1.1 * _bump(hours, 8.0, 1.1)
    if archetype == "evening_peak":
        return 0.1 + 1.1 * _bump(hours, 18.5, 1.2)
    if archetype == "midday_plateau":
        return 0.2 + 0.8 * _bump(hours, 13.0, 3.0)
    if archetype == "flat":
        return 0.55
    raise ConfigError(f"unknown archetype '{archetype}'")


def profile_value(archetype: str, weekday: int, hours: float) -> float:
    """Noise-free intensity; weekends are flat at a low level."""
    if weekday >= 5:
        return 0.18
    return weekday_profile(archetype, hours)


def generate(config: SynthConfig) -> SynthDataset:
    """Deterministically generate records, network files and a manifest."""
    rng = np.random.default_rng(config.seed)

    stations = []
    station_archetypes = {}
    for k in range(config.n_stations):
        sid = f"s{k:03d}"
        angle = 2.0 * math.pi * k / config.n_stations
        stations.append(Station(id=sid,
                                latitude=round(4.6 + 0.05 * math.sin(angle), 6),
                                longitude=round(-74.1 + 0.05 * math.cos(angle), 6)))
        station_archetypes[sid] = config.archetypes[k % len(config.archetypes)]

    # Ring topology plus a few deterministic chords.
    edges = []
    seen: set[frozenset] = set()
    for k in range(config.n_stations):
        a, b = stations[k].id, stations[(k + 1) % config.n_stations].id
        key = frozenset((a, b))
        if a != b and key not in seen:
            seen.add(key)
            edges.append((a, b))
    ring_size = len(edges)
    attempts = 0
    while config.n_stations > 2 and len(seen) - ring_size < config.extra_edges and attempts < 100:
        attempts += 1
        i, j = rng.integers(0, config.n_stations, size=2)
        if i == j:
            continue
        key = frozenset((stations[i].id, stations[j].id))
        if key in seen:
            continue
        seen.add(key)
        edges.append((stations[int(i)].id, stations[int(j)].id))

    records: list[RidershipRecord] = []
    totals = {s.id: 0 for s in stations}
    for d in range(config.days):
        day = config.start + timedelta(days=d)
        for slot in service_slots(day, config.interval_minutes, config.service_window):
            hours = slot.hour + slot.minute / 60.0
            for s in stations:
                level = config.base_level * profile_value(
                    station_archetypes[s.id], day.weekday(), hours)
                if config.noise_sigma > 0:
                    level *= max(0.0, 1.0 + config.noise_sigma * rng.standard_normal())
                boardings = int(round(level))
                if boardings <= 0:
                    continue
                records.append(RidershipRecord(timestamp=slot, station_id=s.id,
                                               boardings=boardings))
                totals[s.id] += boardings

    manifest = {
        "seed": config.seed,
        "days": config.days,
        "start": config.start.isoformat(),
        "noise_sigma": config.noise_sigma,
        "archetypes": station_archetypes,
        "totals": totals,
        "total_boardings": sum(totals.values()),
    }
    return SynthDataset(records=records, stations=stations, edges=edges, manifest=manifest)


def write_dataset(dataset: SynthDataset, out_dir, header: str = "") -> dict[str, str]:
    """Write ridership/station/edge CSVs plus the JSON manifest.

    ``header`` is an optional comment line prepended to each CSV.
    Returns the written paths keyed by role.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "ridership": os.path.join(out_dir, "ridership.csv"),
        "stations": os.path.join(out_dir, "stations.csv"),
        "edges": os.path.join(out_dir, "edges.csv"),
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
    with open(paths["ridership"], "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(["timestamp", "station_id", "boardings"])
        for r in dataset.records:
            w.writerow([r.timestamp.isoformat(), r.station_id, r.boardings])
    with open(paths["stations"], "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(["station_id", "latitude", "longitude"])
        for s in dataset.stations:
            w.writerow([s.id, s.latitude, s.longitude])
    with open(paths["edges"], "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(["from_id", "to_id"])
        for a, b in dataset.edges:
            w.writerow([a, b])
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump(dataset.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
