import math

import numpy as np
import pytest

from routerec import autodiff as ad
from routerec.data import Dataset, Trajectory
from routerec.embeddings import ModelConfig
from routerec.model import Model
from routerec.network import build_network, grid_network
from routerec.prefix_cost import HistoryBank
from routerec.training import (
    DivergenceError,
    TrainConfig,
    immediate_cost,
    measure_ed_lambda,
    mode_targets,
    td_target,
    train,
    train_value_epoch,
    trajectory_targets,
    value_loss,
)
from routerec.value_net import build_edge_index

T0 = 1_564_963_200.0


def small_cfg(**kw):
    base = dict(k_user=3, k_loc=4, k_weekday=2, k_hour=2, k_state=5,
                k_node=4, k_dist=3, heads=2, gat_layers=1, dist_bins=4)
    base.update(kw)
    return ModelConfig(**base)


def chain_with_spurs(n: int):
    """A one-way chain 0->1->..->n-1 where every non-final node also feeds a
    dead-end spur, so each transition has exactly two options."""
    coords = [(100.0 * i, 0.0) for i in range(n)]
    edges = []
    spur_base = n
    for i in range(n - 1):
        coords.append((100.0 * i, 100.0))
        edges.append((i, i + 1))
        edges.append((i, spur_base + i))
    return build_network(coords, edges)


class TestImmediateCost:
    def test_probability_one_costs_nothing(self):
        assert immediate_cost(1.0) == 0.0

    def test_quarter(self):
        assert immediate_cost(0.25) == pytest.approx(math.log(4.0), abs=1e-15)

    def test_inverse_e(self):
        assert immediate_cost(1.0 / math.e) == pytest.approx(1.0, abs=1e-15)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            immediate_cost(0.0)
        with pytest.raises(ValueError):
            immediate_cost(-0.5)
        with pytest.raises(ValueError):
            immediate_cost(1.5)


class TestTdTarget:
    def test_terminal_three_costs(self):
        assert td_target([1.0, 1.0, 1.0], 99.0, 3, 0.5) == pytest.approx(1.75)

    def test_terminal_with_larger_n(self):
        assert td_target([1.0, 1.0, 1.0], 99.0, 5, 0.5) == pytest.approx(1.75)

    def test_zero_discount_keeps_first_cost(self):
        assert td_target([3.0, 1.0, 1.0], 42.0, 4, 0.0) == 3.0

    def test_one_step_bootstrap(self):
        assert td_target([2.0, 7.0], 10.0, 1, 0.9) == pytest.approx(2.0 + 0.9 * 10.0)

    def test_invalid_n(self):
        with pytest.raises(ValueError):
            td_target([1.0], 0.0, 0, 0.9)


class TestModeTargets:
    def test_sl_undiscounted_sum(self):
        targets = mode_targets("SL", [1.0, 1.0, 1.0], 5, 0.5, lambda j: 0.0)
        assert targets == {1: 3.0, 2: 2.0, 3: 1.0}

    def test_mc_discounted_return(self):
        targets = mode_targets("MC", [1.0, 1.0, 1.0], 5, 0.5, lambda j: 0.0)
        assert targets[1] == pytest.approx(1.75)

    def test_ntd_one_step_uses_one_cost(self):
        boot = {2: 10.0, 3: 20.0}
        targets = mode_targets("n-TD", [1.0, 2.0, 4.0], 1, 0.5, boot.__getitem__)
        assert targets[1] == pytest.approx(1.0 + 0.5 * 10.0)
        assert targets[2] == pytest.approx(2.0 + 0.5 * 20.0)
        assert targets[3] == pytest.approx(4.0)

    def test_mc_equals_ntd_with_large_n(self):
        costs = [0.5, 1.5, 0.25, 1.0]
        mc = mode_targets("MC", costs, len(costs), 0.9, lambda j: 0.0)
        ntd = mode_targets("n-TD", costs, len(costs), 0.9,
                           lambda j: pytest.fail("bootstrap must not be consulted"))
        assert mc == ntd

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            mode_targets("XX", [1.0], 1, 0.9, lambda j: 0.0)
        with pytest.raises(ValueError):
            TrainConfig(mode="bogus")


class TestValueLoss:
    def _setup(self, mode="n-TD", **cfg_kw):
        net = grid_network(4, 4, 100.0)
        cfg = small_cfg(**cfg_kw)
        model = Model.new(cfg, 2, net.num_locations, seed=3)
        traj = Trajectory(user=0, steps=((0, T0), (1, T0 + 10), (2, T0 + 20),
                                         (6, T0 + 30)), split="train")
        ds = Dataset([traj])
        bank = HistoryBank(4)
        bank.refresh(model, net, ds)
        ei = build_edge_index(net, cfg)
        tcfg = TrainConfig(mode=mode, td_steps=2, discount=0.9, seed=0)
        return net, model, traj, bank, ei, tcfg

    def test_length_two_has_single_position(self):
        net, model, _, bank, ei, tcfg = self._setup()
        traj = Trajectory(user=0, steps=((0, T0), (1, T0 + 10)), split="train")
        targets = trajectory_targets(model, net, traj, bank, tcfg, ei)
        assert len(targets) == 1  # the destination position is skipped

    def test_loss_is_sum_of_squared_errors(self):
        net, model, traj, bank, ei, tcfg = self._setup()
        targets = trajectory_targets(model, net, traj, bank, tcfg, ei)
        loss = value_loss(model, net, traj, bank, tcfg, ei, targets=targets)
        # independent recomputation from the no-grad side
        from routerec.training import _position_predictions
        from routerec.prefix_cost import encode_states, trajectory_query
        P = model.frozen_params()
        states = encode_states(P, model.cfg, net, trajectory_query(traj),
                               traj.locations, bank)
        preds = _position_predictions(P, model.cfg, net, ei, states, traj.locations,
                                      [1, 2, 3])
        expected = sum((float(p) - targets[i]) ** 2
                       for i, p in zip([1, 2, 3], np.atleast_1d(preds)))
        assert loss.item() == pytest.approx(expected, rel=1e-12)

    def test_perfect_predictions_zero_loss(self):
        net, model, traj, bank, ei, tcfg = self._setup()
        from routerec.training import _position_predictions
        from routerec.prefix_cost import encode_states, trajectory_query
        P = model.frozen_params()
        states = encode_states(P, model.cfg, net, trajectory_query(traj),
                               traj.locations, bank)
        preds = _position_predictions(P, model.cfg, net, ei, states, traj.locations,
                                      [1, 2, 3])
        loss = value_loss(model, net, traj, bank, tcfg, ei,
                          targets={i: float(p)
                                   for i, p in zip([1, 2, 3], np.atleast_1d(preds))})
        assert loss.item() == pytest.approx(0.0, abs=1e-18)

    def test_semi_gradient_targets_are_constants(self):
        # finite differences with frozen targets must match backward exactly;
        # a full-gradient implementation would disagree through the bootstrap
        net, model, traj, bank, ei, tcfg = self._setup()
        targets = trajectory_targets(model, net, traj, bank, tcfg, ei)
        err = ad.finite_diff_check(
            model.store,
            lambda: value_loss(model, net, traj, bank, tcfg, ei, targets=targets),
            max_coords=200)
        assert err <= 1e-4

    def test_short_trajectory_rejected(self):
        net, model, traj, bank, ei, tcfg = self._setup()
        bad = Trajectory(user=0, steps=((0, T0),), split="train")
        with pytest.raises(ValueError):
            value_loss(model, net, bad, bank, tcfg, ei)

    def test_loss_decreases_on_chain(self):
        net = chain_with_spurs(10)
        cfg = small_cfg(use_moving_state=False)
        model = Model.new(cfg, 1, net.num_locations, seed=0)
        # exactly-uniform transitions (cost ln 2 per step); value net keeps
        # its random init so the cost head is off the all-zeros saddle
        model.store["trans.score_vec"].data.fill(0.0)
        traj = Trajectory(user=0, steps=tuple((i, T0 + 10.0 * i) for i in range(10)),
                          split="train")
        bank = HistoryBank(4)
        ei = build_edge_index(net, cfg)
        tcfg = TrainConfig(mode="n-TD", td_steps=5, discount=0.9, lr=1e-2, seed=0)
        first = None
        last = None
        for step in range(200):
            loss = value_loss(model, net, traj, bank, tcfg, ei)
            if first is None:
                first = loss.item()
            last = loss.item()
            ad.backward(loss)
            model.store.adam_step(tcfg.lr)
        assert last < 0.2 * first


class TestTrainingLoop:
    def _dataset(self, net):
        trajs = []
        for k in range(12):
            locs = [0, 1, 2, 3] if k % 2 == 0 else [12, 8, 4, 0]
            trajs.append(Trajectory(
                user=0, steps=tuple((l, T0 + 500.0 * k + 12.0 * i)
                                    for i, l in enumerate(locs)),
                split="train" if k < 10 else "val"))
        return Dataset(trajs)

    def test_determinism_bit_identical_checkpoints(self, tmp_path):
        from routerec.model import save_checkpoint
        net = grid_network(4, 4, 100.0)
        ds = self._dataset(net)
        paths = []
        for run in range(2):
            mcfg = small_cfg()
            tcfg = TrainConfig(seed=7, lr=3e-3, pretrain_epochs=2, joint_epochs=1,
                               val_max_expansions=50)
            model, extras, rows = train(net, ds, mcfg, tcfg)
            p = tmp_path / f"run{run}.json"
            save_checkpoint(model, str(p), extras=extras)
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_pretrain_halves_loss(self):
        net = grid_network(4, 4, 100.0)
        trajs = []
        for k in range(20):
            base = [0, 1, 2, 3, 7] if k % 2 == 0 else [15, 11, 7, 3]
            trajs.append(Trajectory(
                user=k % 2, steps=tuple((l, T0 + 300.0 * k + 10.0 * i)
                                        for i, l in enumerate(base)),
                split="train"))
        ds = Dataset(trajs)
        mcfg = small_cfg(k_state=16)
        tcfg = TrainConfig(seed=1, lr=1e-2, pretrain_epochs=30, joint_epochs=0)
        from routerec.prefix_cost import rnn_loss
        probe = Model.new(mcfg, ds.num_users, net.num_locations, seed=tcfg.seed)
        initial = rnn_loss(probe, net, ds, None).item()
        model, extras, rows = train(net, ds, mcfg, tcfg)
        assert rows[-1]["loss1"] < 0.5 * initial

    def test_log_rows_per_epoch(self):
        net = grid_network(4, 4, 100.0)
        ds = self._dataset(net)
        tcfg = TrainConfig(seed=0, pretrain_epochs=2, joint_epochs=1,
                           val_max_expansions=50)
        model, extras, rows = train(net, ds, small_cfg(), tcfg)
        assert len(rows) == 3
        assert rows[0]["loss2"] is None
        assert rows[-1]["loss2"] is not None
        assert rows[-1]["val_f1"] is not None
        assert "ed_lambda" in extras and extras["ed_lambda"] > 0

    def test_alternation_preserves_table_identity(self):
        net = grid_network(4, 4, 100.0)
        ds = self._dataset(net)
        mcfg = small_cfg()
        model = Model.new(mcfg, ds.num_users, net.num_locations, seed=0)
        bank = HistoryBank(mcfg.history_cap)
        bank.refresh(model, net, ds)
        ei = build_edge_index(net, mcfg)
        tcfg = TrainConfig(seed=0)
        table_before = model.store["emb.loc"].data
        emb_snapshot = table_before.copy()
        from routerec.training import train_rnn_epoch
        order = [i for i, t in enumerate(ds.trajectories) if t.split == "train"]
        train_rnn_epoch(model, net, ds, bank, tcfg, order)
        assert model.store["emb.loc"].data is table_before
        assert not np.array_equal(model.store["emb.loc"].data, emb_snapshot)
        emb_snapshot = table_before.copy()
        train_value_epoch(model, net, ds, bank, tcfg, ei, order)
        assert model.store["emb.loc"].data is table_before
        assert not np.array_equal(model.store["emb.loc"].data, emb_snapshot)

    def test_no_training_split_rejected(self):
        net = grid_network(4, 4, 100.0)
        ds = Dataset([Trajectory(user=0, steps=((0, T0), (1, T0 + 9)), split="test")])
        with pytest.raises(ValueError):
            train(net, ds, small_cfg(), TrainConfig(seed=0))

    def test_divergence_aborts_with_context(self):
        net = grid_network(4, 4, 100.0)
        ds = self._dataset(net)
        mcfg = small_cfg()
        tcfg = TrainConfig(seed=0, pretrain_epochs=1, joint_epochs=0)
        import routerec.training as tr
        original = tr.train_rnn_epoch

        def poisoned(model, *args, **kw):
            model.store["emb.user"].data[0, 0] = math.nan
            return original(model, *args, **kw)

        tr.train_rnn_epoch = poisoned
        try:
            with pytest.raises(DivergenceError, match="epoch 1"):
                train(net, ds, mcfg, tcfg)
        finally:
            tr.train_rnn_epoch = original


class TestEdLambda:
    def test_uniform_model_scale(self):
        # uniform 0.25 transitions on interior nodes: cost ln 4 per 100 m
        net = grid_network(5, 5, 100.0)
        trajs = [Trajectory(user=0, steps=((6, T0), (7, T0 + 12), (12, T0 + 24),
                                           (11, T0 + 36)), split="train")]
        ds = Dataset(trajs)
        cfg = small_cfg()
        model = Model.new(cfg, 1, net.num_locations, seed=0).zero_params()
        lam = measure_ed_lambda(model, net, ds, None)
        assert lam == pytest.approx(math.log(4.0) / 100.0, rel=1e-9)
