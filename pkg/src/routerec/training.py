"""Training: immediate costs, n-step bootstrapped targets, and the
pretrain-then-alternate schedule.

The recurrent component trains first on observed-path cost alone; joint
epochs then alternate one full pass of that loss with one full pass of the
value-model regression.  Value targets are semi-gradient: immediate costs
and bootstrapped estimates are recomputed from the live model each epoch but
enter the loss as constants.  Optimizer steps happen per trajectory within
each pass.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .model import Model
from .network import RoadNetwork, euclid, mean_edge_length
from .prefix_cost import (
    HistoryBank,
    QueryContext,
    expand_candidates,
    encode_states,
    initial_state,
    trajectory_g,
    trajectory_query,
)
from .value_net import (
    EdgeIndex,
    build_edge_index,
    h_estimate_multi,
    node_representations,
    node_representations_multi,
)

VALUE_CHUNK = 8  # positions per fused value-model graph (bounds peak memory)

log = logging.getLogger(__name__)

TRAIN_MODES = ("n-TD", "MC", "SL")


class DivergenceError(ad.NumericError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    mode: str = "n-TD"
    td_steps: int = 5
    discount: float = 0.9
    pretrain_epochs: int = 40
    joint_epochs: int = 2
    lr: float = 1e-2
    lr_decay: float = 0.92  # per-epoch multiplier; annealing is what lets the
    seed: int = 0           # per-trajectory steps settle into a shared optimum
    clip_norm: float = 5.0
    val_max_expansions: int = 400
    value_sample: int | None = 8  # positions per trajectory per value epoch

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}")
        if self.td_steps < 1:
            raise ValueError("td_steps must be >= 1")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must be in [0, 1)")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.value_sample is not None and self.value_sample < 1:
            raise ValueError("value_sample must be >= 1 or None")

    def epoch_lr(self, epoch: int) -> float:
        """Annealed learning rate for a zero-based epoch index."""
        return self.lr * self.lr_decay ** epoch


def immediate_cost(p: float) -> float:
    """Cost of taking a transition with probability p."""
    if p <= 0.0:
        raise ValueError(f"probability must be positive (got {p})")
    if p > 1.0:
        raise ValueError(f"probability must be <= 1 (got {p})")
    return -math.log(p)


def td_target(costs_after: list[float], h_bootstrap: float, n: int, discount: float) -> float:
    """n-step discounted target from the costs following a position.

    ``costs_after`` are the observed immediate costs to the destination; when
    fewer than n remain the target truncates there with a zero bootstrap.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    y = 0.0
    for t, c in enumerate(costs_after[:n]):
        y += (discount ** t) * c
    if len(costs_after) > n:
        y += (discount ** n) * h_bootstrap
    return y


def observed_costs(params, cfg, net: RoadNetwork, traj, bank=None, exclude=None):
    """Immediate costs c_2..c_T and per-prefix states along a trajectory."""
    q = trajectory_query(traj)
    qc = QueryContext(params, cfg, q, bank, exclude)
    state = initial_state(qc)
    costs: list[float] = []
    states = [state]
    for loc in traj.locations[1:]:
        nbrs, exts, probs = expand_candidates(net, qc, state)
        k = nbrs.index(loc)
        costs.append(immediate_cost(float(ad._val(probs)[k])))
        state = exts[k]
        states.append(state)
    return costs, states


def mode_targets(mode: str, costs: list[float], n: int, discount: float,
                 bootstrap, positions: list[int] | None = None) -> dict[int, float]:
    """Regression target per 1-based position under a training mode.

    ``bootstrap`` maps a position j to the current estimate of the remaining
    cost from location j; only n-TD consults it.
    """
    n_pos = len(costs)  # positions 1..T-1
    if positions is None:
        positions = list(range(1, n_pos + 1))
    targets: dict[int, float] = {}
    for i in positions:
        future = costs[i - 1:]
        if mode == "SL":
            targets[i] = float(sum(future))
        elif mode == "MC":
            targets[i] = td_target(future, 0.0, len(future), discount)
        elif mode == "n-TD":
            boot = bootstrap(i + n) if len(future) > n else 0.0
            targets[i] = td_target(future, boot, n, discount)
        else:
            raise ValueError(f"unknown training mode {mode!r}")
    return targets


def _position_predictions(params, cfg, net, ei: EdgeIndex, states, locs, positions):
    """Value estimates h(l_i -> dest) for the given 1-based positions.

    Uses one fused graph pass conditioned per position when the moving state
    matters, or a single shared pass otherwise.
    """
    dest = locs[-1]
    h_states = [states[i - 1].h_state if states is not None else None for i in positions]
    at = [locs[i - 1] for i in positions]
    meters = [euclid(net, l, dest) for l in at]
    if cfg.gat_mode == "i-GAT" and cfg.use_moving_state and states is not None:
        reprs = node_representations_multi(params, cfg, ei, h_states)
        return h_estimate_multi(params, cfg, reprs, h_states, at, dest, meters,
                                stride=ei.n_nodes)
    reprs = node_representations(params, cfg, ei, None)
    return h_estimate_multi(params, cfg, reprs, h_states, at, dest, meters, stride=0)


def trajectory_targets(model: Model, net: RoadNetwork, traj, bank, tcfg: TrainConfig,
                       ei: EdgeIndex, exclude=None,
                       positions: list[int] | None = None) -> dict[int, float]:
    """Semi-gradient targets, keyed by 1-based position (plain floats, no tape).

    Restricting ``positions`` also restricts the bootstrap evaluations, which
    dominate target computation for long trajectories.
    """
    frozen = model.frozen_params()
    cfg = model.cfg
    costs, states = observed_costs(frozen, cfg, net, traj, bank, exclude)
    locs = traj.locations
    n_pos = len(locs) - 1
    if positions is None:
        positions = list(range(1, n_pos + 1))
    boot_positions = sorted({i + tcfg.td_steps for i in positions
                             if (n_pos - i + 1) > tcfg.td_steps}) \
        if tcfg.mode == "n-TD" else []
    boot_values: dict[int, float] = {}
    if boot_positions:
        preds = _position_predictions(frozen, cfg, net, ei,
                                      states if cfg.use_moving_state else None,
                                      locs, boot_positions)
        vals = np.atleast_1d(ad._val(preds))
        boot_values = {j: float(v) for j, v in zip(boot_positions, vals)}
    return mode_targets(tcfg.mode, costs, tcfg.td_steps, tcfg.discount,
                        lambda j: boot_values.get(j, 0.0), positions=positions)


def value_loss(model: Model, net: RoadNetwork, traj, bank, tcfg: TrainConfig,
               ei: EdgeIndex, exclude=None, targets=None, positions=None):
    """Squared prediction error of the value model over one trajectory.

    Targets are computed once (or supplied) and held constant; the prediction
    side is differentiable, including through the moving state.  ``positions``
    restricts the loss to a subset of 1-based positions (used for chunking).
    """
    if len(traj) < 2:
        raise ValueError("value loss needs a trajectory of length >= 2")
    if targets is None:
        targets = trajectory_targets(model, net, traj, bank, tcfg, ei, exclude)
    params = model.graph_params()
    cfg = model.cfg
    locs = traj.locations
    if positions is None:
        positions = list(range(1, len(locs)))  # position T is skipped: nothing remains
    if cfg.use_moving_state:
        states = encode_states(params, cfg, net, trajectory_query(traj), locs, bank, exclude)
    else:
        states = None
    preds = _position_predictions(params, cfg, net, ei, states, locs, positions)
    diffs = ad.sub(preds, np.asarray([targets[i] for i in positions]))
    return ad.vsum(ad.mul(diffs, diffs))


def dataset_value_loss(model: Model, net: RoadNetwork, dataset: Dataset, bank,
                       tcfg: TrainConfig, ei: EdgeIndex, split: str = "train"):
    """Total value-model loss over a split (diagnostic; training steps per trajectory)."""
    terms = []
    for i, traj in enumerate(dataset.trajectories):
        if split and traj.split != split:
            continue
        terms.append(value_loss(model, net, traj, bank, tcfg, ei, exclude=i))
    return ad.add_n(terms)


def train_rnn_epoch(model: Model, net: RoadNetwork, dataset: Dataset, bank,
                    tcfg: TrainConfig, order: list[int],
                    lr: float | None = None) -> float:
    """One full observed-cost pass; one optimizer step per trajectory."""
    params = model.graph_params()
    step_lr = tcfg.lr if lr is None else lr
    total = 0.0
    for idx in order:
        traj = dataset.trajectories[idx]
        loss = trajectory_g(params, model.cfg, net, traj, bank, exclude=idx)
        total += loss.item()
        ad.backward(loss)
        model.store.adam_step(step_lr, clip_norm=tcfg.clip_norm)
    return total


def train_value_epoch(model: Model, net: RoadNetwork, dataset: Dataset, bank,
                      tcfg: TrainConfig, ei: EdgeIndex, order: list[int],
                      rng: np.random.Generator | None = None,
                      lr: float | None = None) -> float:
    """One value-model pass; one optimizer step per trajectory.

    When ``rng`` is given and the trajectory is longer than
    ``tcfg.value_sample``, a seeded position sample is trained instead of
    every position (the full per-position sum dominates the epoch budget on
    long trajectories).  Long chunks run with gradient accumulation, which
    bounds the size of any single fused graph.
    """
    step_lr = tcfg.lr if lr is None else lr
    total = 0.0
    for idx in order:
        traj = dataset.trajectories[idx]
        positions = list(range(1, len(traj)))
        if rng is not None and tcfg.value_sample is not None \
                and len(positions) > tcfg.value_sample:
            picked = rng.choice(len(positions), size=tcfg.value_sample, replace=False)
            positions = [positions[i] for i in sorted(picked)]
        targets = trajectory_targets(model, net, traj, bank, tcfg, ei, exclude=idx,
                                     positions=positions)
        for k in range(0, len(positions), VALUE_CHUNK):
            chunk = positions[k:k + VALUE_CHUNK]
            loss = value_loss(model, net, traj, bank, tcfg, ei, exclude=idx,
                              targets=targets, positions=chunk)
            total += loss.item()
            ad.backward(loss)
        model.store.adam_step(step_lr, clip_norm=tcfg.clip_norm)
    return total


def measure_ed_lambda(model: Model, net: RoadNetwork, dataset: Dataset, bank) -> float:
    """Cost-per-meter scale: mean transition cost over mean edge length (train split)."""
    frozen = model.frozen_params()
    total_cost = 0.0
    total_len = 0.0
    count = 0
    for i, traj in enumerate(dataset.trajectories):
        if traj.split != "train":
            continue
        costs, _ = observed_costs(frozen, model.cfg, net, traj, bank, exclude=i)
        locs = traj.locations
        total_cost += sum(costs)
        total_len += sum(euclid(net, a, b) for a, b in zip(locs, locs[1:]))
        count += len(costs)
    if count == 0 or total_len == 0.0:
        return 1.0 / mean_edge_length(net)
    return total_cost / total_len


def train(net: RoadNetwork, dataset: Dataset, model_cfg, tcfg: TrainConfig):
    """Full schedule: pretrain the recurrent component, then alternate.

    Returns (model, extras, log_rows).  The checkpointed parameters are the
    best-validation-F1 snapshot seen during joint epochs (or the final state
    when there are none).  Deterministic given (net, dataset, configs).
    """
    from .metrics import evaluate  # deferred: metrics->search->this module's deps
    from .search import SearchConfig

    train_idx = [i for i, t in enumerate(dataset.trajectories) if t.split == "train"]
    if not train_idx:
        raise ValueError("dataset has no training split")
    model = Model.new(model_cfg, dataset.num_users, net.num_locations, seed=tcfg.seed)
    bank = HistoryBank(model_cfg.history_cap)
    ei = build_edge_index(net, model_cfg)
    shuffle_rng = np.random.default_rng([tcfg.seed, 1])
    value_rng = np.random.default_rng([tcfg.seed, 2])
    log_rows: list[dict] = []
    best_f1 = -1.0
    best_snapshot = None

    def epoch_order() -> list[int]:
        return [train_idx[k] for k in shuffle_rng.permutation(len(train_idx))]

    epoch = 0
    try:
        for _ in range(tcfg.pretrain_epochs):
            epoch += 1
            bank.refresh(model, net, dataset)
            loss1 = train_rnn_epoch(model, net, dataset, bank, tcfg, epoch_order(),
                                    lr=tcfg.epoch_lr(epoch - 1))
            log.info("epoch %d pretrain loss1=%.4f", epoch, loss1)
            log_rows.append({"epoch": epoch, "loss1": loss1, "loss2": None,
                             "val_precision": None, "val_recall": None,
                             "val_f1": None, "val_edt": None})
        for joint_idx in range(tcfg.joint_epochs):
            epoch += 1
            bank.refresh(model, net, dataset)
            loss1 = train_rnn_epoch(model, net, dataset, bank, tcfg, epoch_order(),
                                    lr=tcfg.epoch_lr(epoch - 1))
            # the value model starts cold here: anneal it on its own clock
            loss2 = train_value_epoch(model, net, dataset, bank, tcfg, ei,
                                      epoch_order(), rng=value_rng,
                                      lr=tcfg.epoch_lr(joint_idx))
            val_cfg = SearchConfig(heuristic_mode="value-net",
                                   max_expansions=tcfg.val_max_expansions)
            report = evaluate(model, net, dataset, val_cfg, bank=bank, split="val")
            f1 = report.mean_f1
            log.info("epoch %d loss1=%.4f loss2=%.4f val_f1=%.3f", epoch, loss1, loss2, f1)
            log_rows.append({"epoch": epoch, "loss1": loss1, "loss2": loss2,
                             "val_precision": report.mean_precision,
                             "val_recall": report.mean_recall,
                             "val_f1": f1, "val_edt": report.mean_edt})
            if f1 > best_f1:
                best_f1 = f1
                best_snapshot = model.copy_params()
    except ad.NumericError as exc:
        raise DivergenceError(f"training diverged at epoch {epoch}: {exc}") from exc

    if best_snapshot is not None:
        model.set_params(best_snapshot)
    bank.refresh(model, net, dataset)
    extras = {"ed_lambda": measure_ed_lambda(model, net, dataset, bank),
              "best_val_f1": best_f1 if best_f1 >= 0 else None}
    return model, extras, log_rows
