"""Station network representation and adjacency utilities."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Station:
    id: str
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise DataError(f"station {self.id}: latitude {self.latitude} out of range")
        if not -180.0 <= self.longitude <= 180.0:
            raise DataError(f"station {self.id}: longitude {self.longitude} out of range")


@dataclass
class TransitGraph:
    """Immutable station network.

    Station order is fixed at build time and defines the node index used by
    every tensor in the model.  Self-loops are a flag, never stored edges.
    """

    stations: list[Station]
    edges: set[frozenset]  # pairs of station indices
    self_loops: bool = True
    neighbor_index: list[list[int]] = field(default_factory=list)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def station_ids(self) -> list[str]:
        return [s.id for s in self.stations]

    def neighbors(self, i: int) -> list[int]:
        """Sorted neighbors of node ``i`` (including ``i`` iff self_loops)."""
        return self.neighbor_index[i]

    def edge_count(self) -> int:
        return len(self.edges)

    def edge_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All (receiver, sender) pairs, grouped by receiver, sender-sorted."""
        receivers, senders = [], []
        for i in range(self.n_stations):
            for j in self.neighbor_index[i]:
                receivers.append(i)
                senders.append(j)
        return np.asarray(receivers, dtype=np.intp), np.asarray(senders, dtype=np.intp)

    def adjacency(self, with_self_loops: bool = False) -> np.ndarray:
        n = self.n_stations
        a = np.zeros((n, n))
        for e in self.edges:
            i, j = sorted(e)
            a[i, j] = a[j, i] = 1.0
        if with_self_loops:
            a += np.eye(n)
        return a


def build_graph(stations: list[Station], edge_list: list[tuple[str, str]],
                self_loops: bool = True) -> TransitGraph:
    """Build a deduplicated undirected graph from station-id edge pairs."""
    index = {}
    for s in stations:
        if s.id in index:
            raise DataError(f"duplicate station id '{s.id}'")
        index[s.id] = len(index)

    edges: set[frozenset] = set()
    for a, b in edge_list:
        for sid in (a, b):
            if sid not in index:
                raise DataError(f"edge endpoint '{sid}' is not a known station")
        if a == b:
            raise DataError(f"self edge ({a},{b}) not allowed; use the self_loops flag")
        edges.add(frozenset((index[a], index[b])))

    neighbor_index: list[list[int]] = [[] for _ in stations]
    for e in edges:
        i, j = sorted(e)
        neighbor_index[i].append(j)
        neighbor_index[j].append(i)
    for i, nbrs in enumerate(neighbor_index):
        if self_loops:
            nbrs.append(i)
        nbrs.sort()

    return TransitGraph(stations=list(stations), edges=edges,
                        self_loops=self_loops, neighbor_index=neighbor_index)


def normalize_adjacency(graph: TransitGraph) -> np.ndarray:
    """Symmetric degree-normalized adjacency with added self-loops.

    Returns D^{-1/2} (A + I) D^{-1/2}; the identity term guarantees every
    degree is positive.
    """
    if graph.n_stations == 0:
        raise DataError("normalize_adjacency: empty graph")
    a_tilde = graph.adjacency(with_self_loops=False) + np.eye(graph.n_stations)
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return a_tilde * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


def load_stations(path) -> list[Station]:
    """Read a `station_id,latitude,longitude` CSV."""
    stations = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(_strip_comments(fh)):
            stations.append(Station(id=row["station_id"],
                                    latitude=float(row["latitude"]),
                                    longitude=float(row["longitude"])))
    return stations


def load_edges(path) -> list[tuple[str, str]]:
    """Read a `from_id,to_id` CSV."""
    edges = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(_strip_comments(fh)):
            edges.append((row["from_id"], row["to_id"]))
    return edges


def _strip_comments(lines):
    return (ln for ln in lines if not ln.startswith("#"))
