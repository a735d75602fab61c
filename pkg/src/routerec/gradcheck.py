"""Self-contained finite-difference verification of the gradient machinery.

Runs small randomized checks over every differentiable primitive, then over
the two full training losses on a toy network and trajectory.  Used by the
command-line entry point and by the acceptance suite.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .data import Dataset, Trajectory
from .embeddings import ModelConfig
from .model import Model
from .network import build_network
from .prefix_cost import HistoryBank, rnn_loss
from .training import TrainConfig, value_loss
from .value_net import build_edge_index

PRIMITIVE_TOL = 1e-5
FULL_LOSS_TOL = 1e-4


def toy_config() -> ModelConfig:
    return ModelConfig(k_user=3, k_loc=4, k_weekday=2, k_hour=2, k_state=5,
                       k_node=4, k_dist=3, heads=2, gat_layers=1, dist_bins=4)


def toy_network():
    """Five locations, varied degrees, one dead end."""
    coords = [(0, 0), (100, 0), (200, 0), (100, 120), (0, 120)]
    edges = [(0, 1), (1, 0), (1, 2), (2, 1), (0, 3), (3, 0), (3, 1),
             (3, 4), (4, 3), (4, 0), (1, 4)]
    return build_network(coords, edges)


def toy_trajectory() -> Trajectory:
    return Trajectory(user=1, steps=((0, 1_564_963_200.0), (3, 1_564_963_215.0),
                                     (1, 1_564_963_230.0), (2, 1_564_963_245.0)),
                      split="train")


def toy_dataset() -> Dataset:
    # three same-user trajectories: each one's loss then attends over two
    # history entries (a single entry would collapse the history attention
    # to a constant and zero out the transition gradients)
    second = Trajectory(user=1, steps=((4, 1_565_049_600.0), (0, 1_565_049_615.0),
                                       (1, 1_565_049_630.0), (2, 1_565_049_645.0)),
                        split="train")
    third = Trajectory(user=1, steps=((2, 1_565_136_000.0), (1, 1_565_136_015.0),
                                      (4, 1_565_136_030.0), (3, 1_565_136_045.0)),
                       split="train")
    return Dataset([toy_trajectory(), second, third])


def _primitive_cases(seed: int):
    rng = np.random.default_rng(seed)

    def vec(n):
        return rng.uniform(-1.0, 1.0, size=n)

    def away_from_kinks(x, margin=1e-3):
        x = np.where(np.abs(x) < margin, x + 2 * margin, x)
        return x

    return {
        "dense": (lambda s: s.add("w", (3, 4)),
                  lambda s, c: ad.vsum(ad.tanh(ad.matmul(s["w"], c[:4])))),
        "matmul2d": (lambda s: s.add("w", (3, 3)),
                     lambda s, c: ad.vsum(ad.tanh(ad.matmul(s["w"], c[:9].reshape(3, 3))))),
        "concat": (lambda s: (s.add("a", (3,)), s.add("b", (4,))),
                   lambda s, c: ad.vsum(ad.tanh(ad.concat([s["a"], s["b"]])))),
        "add_mul_div": (lambda s: (s.add("a", (4,)), s.add("b", (4,))),
                        lambda s, c: ad.vsum(ad.div(ad.mul(ad.add(s["a"], 0.5), s["b"]),
                                                    ad.add(ad.mul(s["a"], s["a"]), 2.0)))),
        "tanh": (lambda s: s.add("a", (5,)), lambda s, c: ad.vsum(ad.tanh(s["a"]))),
        "sigmoid": (lambda s: s.add("a", (5,)), lambda s, c: ad.vsum(ad.sigmoid(s["a"]))),
        "relu": (lambda s: s.add("a", (6,)),
                 lambda s, c: ad.vsum(ad.relu(ad.add(s["a"], away_from_kinks(c[:6]))))),
        "softplus": (lambda s: s.add("a", (5,)), lambda s, c: ad.vsum(ad.softplus(s["a"]))),
        "exp_log": (lambda s: s.add("a", (4,)),
                    lambda s, c: ad.vsum(ad.log(ad.add(ad.exp(s["a"]), 1.0)))),
        "softmax": (lambda s: s.add("a", (5,)),
                    lambda s, c: ad.dot(ad.softmax(s["a"]), c[:5])),
        "maximum": (lambda s: s.add("a", (5,)),
                    lambda s, c: ad.vsum(ad.maximum(ad.add(s["a"], away_from_kinks(c[:5])), 0.0))),
        "dot_element": (lambda s: s.add("a", (5,)),
                        lambda s, c: ad.add(ad.dot(s["a"], c[:5]),
                                            ad.element(ad.softmax(s["a"]), 2))),
        "rows_cols": (lambda s: s.add("t", (4, 3)),
                      lambda s, c: ad.vsum(ad.tanh(ad.add(
                          ad.gather_rows(s["t"], np.array([0, 2, 2, 1])),
                          ad.transpose(ad.gather_cols(ad.transpose(s["t"]),
                                                      np.array([1, 1, 3, 0]))))))),
        "row_col_stack": (lambda s: s.add("t", (4, 3)),
                          lambda s, c: ad.vsum(ad.tanh(ad.stack_cols(
                              [ad.row(s["t"], 1), ad.col(ad.transpose(s["t"]), 2)])))),
        "segment_softmax": (lambda s: s.add("a", (2, 7)),
                            lambda s, c: ad.vsum(ad.mul(
                                ad.segment_softmax(s["a"], np.array([0, 3, 4])),
                                c[:14].reshape(2, 7)))),
        "segment_sum": (lambda s: s.add("a", (3, 7)),
                        lambda s, c: ad.vsum(ad.tanh(ad.segment_sum_cols(
                            s["a"], np.array([0, 3, 4]))))),
        "repeat_block": (lambda s: s.add("a", (2, 5)),
                         lambda s, c: ad.vsum(ad.tanh(ad.block_rowsum(
                             ad.mul(ad.repeat_rows(s["a"], 3), c[:30].reshape(6, 5)), 3)))),
        "stack_scalars": (lambda s: s.add("a", (4,)),
                          lambda s, c: ad.vsum(ad.softmax(ad.stack_scalars(
                              [ad.dot(s["a"], c[i * 4:(i + 1) * 4]) for i in range(3)])))),
        "gru": (lambda s: (s.add("uw", (3, 8)), s.add("ub", (3,)),
                           s.add("rw", (3, 8)), s.add("rb", (3,)),
                           s.add("cw", (3, 8)), s.add("cb", (3,))),
                lambda s, c: ad.vsum(ad.gru_step(s["uw"], s["ub"], s["rw"], s["rb"],
                                                 s["cw"], s["cb"], c[:5], c[5:8]))),
    }, vec


def check_primitives(seeds: int = 10) -> dict[str, float]:
    """Max finite-difference error per primitive over randomized runs."""
    worst: dict[str, float] = {}
    for seed in range(seeds):
        cases, vec = _primitive_cases(seed)
        for name, (setup, build) in cases.items():
            store = ad.ParamStore(seed=seed * 1000 + 17)
            setup(store)
            const = vec(30)
            err = ad.finite_diff_check(store, lambda: build(store, const))
            worst[name] = max(worst.get(name, 0.0), err)
    return worst


def check_full_losses(seed: int = 0) -> dict[str, float]:
    """Finite-difference error of the nets' complete loss graphs on a toy case."""
    net = toy_network()
    cfg = toy_config()
    dataset = toy_dataset()
    traj = dataset.trajectories[0]
    model = Model.new(cfg, n_users=2, n_locations=net.num_locations, seed=seed)
    bank = HistoryBank(cfg.history_cap)
    bank.refresh(model, net, dataset)
    ei = build_edge_index(net, cfg)
    tcfg = TrainConfig(mode="n-TD", td_steps=2, discount=0.9, seed=seed)
    # targets stay fixed across the finite-difference evaluations: the
    # target side is a constant by the semi-gradient contract
    from .training import trajectory_targets
    targets = trajectory_targets(model, net, traj, bank, tcfg, ei, exclude=0)
    return {
        "rnn_loss": ad.finite_diff_check(
            model.store, lambda: rnn_loss(model, net, dataset, bank),
            max_coords=400, seed=seed),
        "value_loss": ad.finite_diff_check(
            model.store,
            lambda: value_loss(model, net, traj, bank, tcfg, ei, exclude=0, targets=targets),
            max_coords=400, seed=seed),
    }


def run(seed: int = 0, seeds: int = 10) -> tuple[bool, dict[str, float]]:
    """Full verification pass; returns (all_ok, per-check max errors)."""
    results = check_primitives(seeds=seeds)
    ok = all(v <= PRIMITIVE_TOL for v in results.values())
    full = check_full_losses(seed=seed)
    results.update(full)
    ok = ok and all(v <= FULL_LOSS_TOL for v in full.values())
    return ok, results
