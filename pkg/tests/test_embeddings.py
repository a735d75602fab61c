import numpy as np
import pytest

from routerec import autodiff as ad
from routerec.embeddings import ModelConfig, context_vector, distance_bin, time_indices
from routerec.model import Model

MONDAY_MIDNIGHT = 1_564_963_200  # 2019-08-05 00:00 UTC


@pytest.fixture(scope="module")
def model():
    cfg = ModelConfig(k_user=3, k_loc=4, k_weekday=2, k_hour=5, k_state=6,
                      k_node=4, k_dist=3, heads=2, gat_layers=1, dist_bins=8)
    return Model.new(cfg, n_users=4, n_locations=10, seed=2)


class TestTimeIndices:
    def test_monday_midnight(self):
        assert time_indices(MONDAY_MIDNIGHT) == (1, 1)

    def test_next_hour(self):
        assert time_indices(MONDAY_MIDNIGHT + 3600) == (1, 2)

    def test_sunday(self):
        assert time_indices(MONDAY_MIDNIGHT + 6 * 86400) == (7, 1)

    def test_last_hour_of_day(self):
        assert time_indices(MONDAY_MIDNIGHT + 23 * 3600) == (1, 24)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            time_indices(-1)


class TestDistanceBin:
    def test_zero_meters(self):
        assert distance_bin(0.0, 16) == 0

    def test_fifty_meters(self):
        assert distance_bin(50.0, 16) == 1

    def test_1600_meters(self):
        assert distance_bin(1600.0, 16) == 5

    def test_saturation_at_last_bin(self):
        assert distance_bin(1e6, 10) == 9

    def test_monotone_nondecreasing(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            a, b = sorted(rng.uniform(0, 1e7, size=2))
            assert distance_bin(a, 16) <= distance_bin(b, 16)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            distance_bin(-1.0, 16)


class TestContextVector:
    def test_output_dim(self, model):
        v = context_vector(model.frozen_params(), model.cfg, 1, 2, MONDAY_MIDNIGHT)
        assert v.shape == (model.cfg.k_context,)

    def test_same_hour_invariance(self, model):
        P = model.frozen_params()
        a = context_vector(P, model.cfg, 1, 2, MONDAY_MIDNIGHT + 60)
        b = context_vector(P, model.cfg, 1, 2, MONDAY_MIDNIGHT + 3599)
        assert np.array_equal(a, b)

    def test_hour_change_touches_only_tail(self, model):
        cfg = model.cfg
        P = model.frozen_params()
        a = context_vector(P, cfg, 1, 2, MONDAY_MIDNIGHT)
        b = context_vector(P, cfg, 1, 2, MONDAY_MIDNIGHT + 3600)
        head = cfg.k_user + cfg.k_loc + cfg.k_weekday
        assert np.array_equal(a[:head], b[:head])
        assert not np.array_equal(a[head:], b[head:])

    def test_lookup_is_pure_and_view_backed(self, model):
        P = model.frozen_params()
        a = ad.row(P["emb.loc"], 3)
        b = ad.row(P["emb.loc"], 3)
        assert np.array_equal(a, b)
        assert a.base is P["emb.loc"]

    def test_out_of_range_user(self, model):
        with pytest.raises(IndexError):
            context_vector(model.frozen_params(), model.cfg, 99, 2, MONDAY_MIDNIGHT)


class TestModelConfig:
    def test_heads_must_divide_nodes(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(k_node=10, heads=4)

    def test_mode_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(attention_mode="XX")
        with pytest.raises(ValueError):
            ModelConfig(gat_mode="fancy")

    def test_positive_dims(self):
        with pytest.raises(ValueError):
            ModelConfig(k_user=0)

    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.k_user, cfg.k_loc, cfg.k_weekday, cfg.k_hour) == (16, 32, 4, 8)
        assert (cfg.k_state, cfg.k_node, cfg.k_dist) == (64, 32, 8)
        assert (cfg.heads, cfg.gat_layers, cfg.dist_bins) == (4, 2, 16)
        assert cfg.attention_mode == "BA"
        assert cfg.use_moving_state and cfg.gat_mode == "i-GAT"


class TestModelCheckpoint:
    def test_round_trip_identical(self, model, tmp_path):
        from routerec.model import load_checkpoint, save_checkpoint
        p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
        save_checkpoint(model, str(p1), extras={"ed_lambda": 0.01})
        loaded, extras = load_checkpoint(str(p1))
        assert extras == {"ed_lambda": 0.01}
        assert loaded.cfg == model.cfg
        assert loaded.n_locations == model.n_locations
        for name in model.store.names():
            assert np.array_equal(loaded.store[name].data, model.store[name].data)
        save_checkpoint(loaded, str(p2), extras=extras)
        assert p1.read_bytes() == p2.read_bytes()
