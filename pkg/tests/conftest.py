import numpy as np
import pytest

from transitnet.graph import Station, build_graph


@pytest.fixture
def triangle_graph():
    stations = [Station(f"s{i}", 0.0, float(i)) for i in range(3)]
    return build_graph(stations, [("s0", "s1"), ("s1", "s2"), ("s0", "s2")])


@pytest.fixture
def path3_graph():
    stations = [Station(f"s{i}", 0.0, float(i)) for i in range(3)]
    return build_graph(stations, [("s0", "s1"), ("s1", "s2")])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
