import os

import numpy as np
import pytest

from transitnet.autodiff import Tensor
from transitnet.errors import ConfigError, DimensionError, IntegrityError
from transitnet.graph import Station, build_graph
from transitnet.layers import (DecompositionConfig, decompose, ffnn_forward,
                               gat_edge_weights, gru_sequence, kgnn_aggregate)
from transitnet.model import (BRANCHES, Checkpoint, ModelConfig, ModelParams, forward,
                              forward_v1, forward_v2, init_params, load_checkpoint,
                              save_checkpoint)


def small_config(variant="v1", n_stations=3, hidden=4, seed=0):
    return ModelConfig(variant=variant, n_stations=n_stations, recent_len=6,
                       hist_len=6, hidden=hidden, kernel=3, seed=seed)


def sample_inputs(rng, n_stations, length=6, batch=None):
    shape = (n_stations, length) if batch is None else (batch, n_stations, length)
    return rng.uniform(0, 1, shape), rng.uniform(0, 1, shape)


class TestConfig:
    def test_v1_default_ffnn_widths(self):
        cfg = ModelConfig(variant="v1", n_stations=5, hidden=64)
        assert cfg.ffnn_layers == [256, 128, 1]

    def test_v2_default_ffnn_widths(self):
        cfg = ModelConfig(variant="v2", n_stations=5, hidden=64)
        assert cfg.ffnn_layers == [64, 64, 1]

    def test_bad_variant(self):
        with pytest.raises(ConfigError):
            ModelConfig(variant="v3")

    def test_ffnn_must_end_at_one(self):
        with pytest.raises(ConfigError):
            ModelConfig(variant="v1", hidden=4, ffnn_layers=[16, 8, 2])

    def test_ffnn_first_width_tied_to_variant(self):
        with pytest.raises(ConfigError):
            ModelConfig(variant="v1", hidden=4, ffnn_layers=[8, 1])

    def test_round_trip_dict(self):
        cfg = small_config(variant="v2", seed=9)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestInit:
    def test_same_seed_identical(self):
        a = init_params(small_config(seed=5))
        b = init_params(small_config(seed=5))
        for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_different_seeds_differ(self):
        a = init_params(small_config(seed=1))
        b = init_params(small_config(seed=2))
        assert any(not np.array_equal(ta.data, tb.data)
                   for (_, ta), (_, tb) in zip(a.named_parameters(),
                                               b.named_parameters()))

    def test_weights_within_fan_in_bound(self):
        params = init_params(small_config(seed=3))
        for name, t in params.named_parameters():
            if name.endswith(("b_z", "b_r", "b_h")) or ".bias" in name:
                np.testing.assert_array_equal(t.data, 0.0)
            else:
                fan_in = t.shape[0] if t.data.ndim > 1 else t.data.size
                assert np.abs(t.data).max() <= 1.0 / np.sqrt(fan_in) + 1e-12

    def test_v2_needs_matching_window_lengths(self):
        cfg = ModelConfig(variant="v2", n_stations=3, recent_len=6, hist_len=8,
                          hidden=4, kernel=3)
        with pytest.raises(ConfigError):
            init_params(cfg)

    def test_v2_has_fewer_parameters_than_v1(self):
        v1 = init_params(small_config("v1"))
        v2 = init_params(small_config("v2"))
        assert v2.count() < v1.count()


class TestForward:
    def test_output_shape_single(self, rng, triangle_graph):
        params = init_params(small_config())
        xr, xh = sample_inputs(rng, 3)
        assert forward(params, triangle_graph, xr, xh).shape == (3,)

    def test_output_shape_batched(self, rng, triangle_graph):
        params = init_params(small_config())
        xr, xh = sample_inputs(rng, 3, batch=5)
        assert forward(params, triangle_graph, xr, xh).shape == (5, 3)

    def test_batched_rows_match_single_samples(self, rng, triangle_graph):
        params = init_params(small_config())
        xr, xh = sample_inputs(rng, 3, batch=4)
        batched = forward(params, triangle_graph, xr, xh).data
        for i in range(4):
            single = forward(params, triangle_graph, xr[i], xh[i]).data
            np.testing.assert_allclose(batched[i], single, atol=1e-12)

    def test_station_count_mismatch_rejected(self, rng, triangle_graph):
        params = init_params(small_config(n_stations=4))
        xr, xh = sample_inputs(rng, 4)
        with pytest.raises(DimensionError):
            forward(params, triangle_graph, xr, xh)

    def test_window_length_mismatch_rejected(self, rng, triangle_graph):
        params = init_params(small_config())
        with pytest.raises(DimensionError, match="x_recent"):
            forward(params, triangle_graph, rng.uniform(0, 1, (3, 5)),
                    rng.uniform(0, 1, (3, 6)))

    def test_variant_wrappers_enforce_variant(self, rng, triangle_graph):
        v1 = init_params(small_config("v1"))
        v2 = init_params(small_config("v2"))
        xr, xh = sample_inputs(rng, 3)
        with pytest.raises(ConfigError):
            forward_v1(xr, xh, triangle_graph, v2)
        with pytest.raises(ConfigError):
            forward_v2(xr, xh, triangle_graph, v1)

    def test_v1_matches_manual_layer_composition(self, rng, triangle_graph):
        cfg = small_config("v1")
        params = init_params(cfg)
        xr, xh = sample_inputs(rng, 3)
        out = forward(params, triangle_graph, xr, xh).data

        xt, xres = decompose(xr, DecompositionConfig(cfg.kernel))
        ew = gat_edge_weights(xh, triangle_graph, params.gat)
        series = {"recent": Tensor(xr), "hist": Tensor(xh),
                  "trend": xt, "resid": xres}
        pieces = []
        for b in BRANCHES:
            h = gru_sequence(series[b].data, params.gru[b])
            pieces.append(kgnn_aggregate(h, triangle_graph, ew,
                                         params.kgnn[b]).data)
        features = np.concatenate(pieces, axis=1)
        expected = ffnn_forward(features, params.ffnn).data.reshape(3)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_station_permutation_equivariance(self, rng):
        # Relabeling stations permutes predictions the same way.
        stations = [Station(f"s{i}", 0.0, i / 100) for i in range(4)]
        edges = [("s0", "s1"), ("s1", "s2"), ("s2", "s3"), ("s3", "s0")]
        g = build_graph(stations, edges)
        perm = np.array([2, 0, 3, 1])
        stations_p = [stations[i] for i in perm]
        g_p = build_graph(stations_p, edges)

        params = init_params(small_config(n_stations=4))
        xr, xh = sample_inputs(rng, 4)
        out = forward(params, g, xr, xh).data
        out_p = forward(params, g_p, xr[perm], xh[perm]).data
        np.testing.assert_allclose(out_p, out[perm], atol=1e-12)

    def test_v2_runs_and_is_finite(self, rng, triangle_graph):
        params = init_params(small_config("v2"))
        xr, xh = sample_inputs(rng, 3, batch=2)
        out = forward(params, triangle_graph, xr, xh).data
        assert out.shape == (2, 3)
        assert np.all(np.isfinite(out))


class TestCheckpoint:
    def checkpoint_path(self, tmp_path):
        return os.path.join(tmp_path, "model.ckpt")

    def test_round_trip_exact(self, rng, tmp_path, triangle_graph):
        params = init_params(small_config(seed=11))
        path = self.checkpoint_path(tmp_path)
        save_checkpoint(Checkpoint(params, metadata={"note": "round trip"}), path)
        loaded = load_checkpoint(path)
        assert loaded.metadata == {"note": "round trip"}
        assert loaded.params.config == params.config
        for (na, ta), (nb, tb) in zip(params.named_parameters(),
                                      loaded.params.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)
        xr, xh = sample_inputs(rng, 3)
        np.testing.assert_array_equal(
            forward(params, triangle_graph, xr, xh).data,
            forward(loaded.params, triangle_graph, xr, xh).data)

    def test_scaler_preserved(self, tmp_path):
        from transitnet.data import ScalerParams
        scaler = ScalerParams(mins=np.array([0.0, 1.0, 2.0]),
                              maxs=np.array([10.0, 11.0, 12.0]))
        params = init_params(small_config(), scaler=scaler)
        path = self.checkpoint_path(tmp_path)
        save_checkpoint(Checkpoint(params), path)
        loaded = load_checkpoint(path).params.scaler
        np.testing.assert_array_equal(loaded.mins, scaler.mins)
        np.testing.assert_array_equal(loaded.maxs, scaler.maxs)

    def test_bad_magic_rejected(self, tmp_path):
        path = self.checkpoint_path(tmp_path)
        with open(path, "wb") as fh:
            fh.write(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(IntegrityError, match="magic"):
            load_checkpoint(path)

    def test_flipped_byte_rejected(self, tmp_path):
        params = init_params(small_config())
        path = self.checkpoint_path(tmp_path)
        save_checkpoint(Checkpoint(params), path)
        with open(path, "rb") as fh:
            body = bytearray(fh.read())
        body[len(body) // 2] ^= 0xFF
        with open(path, "wb") as fh:
            fh.write(bytes(body))
        with pytest.raises(IntegrityError, match="checksum"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        params = init_params(small_config())
        path = self.checkpoint_path(tmp_path)
        save_checkpoint(Checkpoint(params), path)
        with open(path, "rb") as fh:
            body = fh.read()
        with open(path, "wb") as fh:
            fh.write(body[:-10])
        with pytest.raises(IntegrityError):
            load_checkpoint(path)

    def test_desk_scale_file_under_five_megabytes(self, tmp_path):
        cfg = ModelConfig(variant="v1", n_stations=10, recent_len=20, hist_len=20,
                          hidden=64, kernel=5)
        path = self.checkpoint_path(tmp_path)
        save_checkpoint(Checkpoint(init_params(cfg)), path)
        assert os.path.getsize(path) < 5 * 1024 * 1024
