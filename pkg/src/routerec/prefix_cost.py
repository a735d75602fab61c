"""Observed-prefix cost: recurrent encoding, two attentions, and the
road-constrained next-location distribution.

A prefix is summarized by a moving state: the last GRU hidden refined by
attention over the prefix's own steps and then over the user's historical
trajectories.  Transition probabilities come from scoring every hypothetical
one-step extension and normalizing over the road-graph successors only.

Time context is deliberately frozen at the query's departure time for every
step: future steps of a search hypothesis have no observed timestamps, and
training uses the same rule so both phases score paths identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import DataError, Dataset, Query, Trajectory
from .embeddings import ModelConfig, context_vector
from .network import RoadNetwork


class DeadEndError(RuntimeError):
    """Transition distribution requested at a location with no successors."""


@dataclass
class MovingState:
    """Evolving summary of one path hypothesis."""

    path: tuple[int, ...]
    hiddens: tuple          # per-step recurrent states
    keys: tuple             # cached intra-attention key projections
    h_tilde: object         # state after intra-trajectory attention
    h_state: object         # state after both attentions (feeds scoring and the value model)
    g_acc: object           # accumulated -log probability of the path

    def __len__(self) -> int:
        return len(self.path)


class HistoryBank:
    """Per-user summaries of past training trajectories.

    Entries are plain arrays (constants for the gradient tape) recomputed
    from the current parameters on refresh; only the ``cap`` most recent
    trajectories per user are kept.
    """

    def __init__(self, cap: int = 32):
        self.cap = cap
        self._entries: dict[int, list[tuple[int, np.ndarray]]] = {}

    def refresh(self, model, net: RoadNetwork, dataset: Dataset, split: str = "train") -> None:
        params = model.frozen_params()
        cfg = model.cfg
        self._entries = {}
        for idx, traj in enumerate(dataset.trajectories):
            if split is not None and traj.split != split:
                continue
            vec = encode_history_entry(params, cfg, traj)
            self._entries.setdefault(traj.user, []).append((idx, traj.start_time, vec))
        for user, entries in self._entries.items():
            entries.sort(key=lambda e: (e[1], e[0]))
            self._entries[user] = [(idx, vec) for idx, _, vec in entries[-self.cap:]]

    def matrix(self, user: int, exclude: int | None = None) -> np.ndarray | None:
        """Entries for a user as a (k_state, n) matrix; None when empty."""
        entries = [vec for idx, vec in self._entries.get(user, []) if idx != exclude]
        if not entries:
            return None
        return np.stack(entries, axis=1)


def empty_bank() -> HistoryBank:
    return HistoryBank()


def encode_history_entry(params, cfg: ModelConfig, traj: Trajectory) -> np.ndarray:
    """Intra-attended final state of a trajectory (no history attention)."""
    depart = traj.start_time
    hiddens = []
    h = np.zeros(cfg.k_state)
    for loc in traj.locations:
        x = context_vector(params, cfg, traj.user, loc, depart)
        h = _gru(params, x, h)
        hiddens.append(h)
    if cfg.attention_mode == "NA":
        return hiddens[-1]
    return intra_attention(params, hiddens)


def _gru(params, x, h):
    return ad.gru_step(
        params["gru.update_w"], params["gru.update_b"],
        params["gru.reset_w"], params["gru.reset_b"],
        params["gru.cand_w"], params["gru.cand_b"],
        x, h,
    )


def intra_attention(params, hiddens: list):
    """Attend the last step over every step of the same prefix."""
    if not hiddens:
        raise ValueError("intra_attention needs at least one hidden state")
    anchor = hiddens[-1]
    keys = [ad.matmul(params["intra.key_w"], h) for h in hiddens]
    return _attend(params, "intra", anchor, ad.stack_cols(keys), ad.stack_cols(list(hiddens)))


def inter_attention(params, h_tilde, bank_matrix: np.ndarray | None):
    """Add an attention-weighted mix of the user's history to the summary.

    Residual form: h = h_tilde + sum_j beta_j * history_j.  The live term has
    fixed weight one, so the transition scores always depend on the candidate
    at first order.  A pure history combination differs between candidates
    only through the softmax weights, which cancels to near machine precision
    at small init (untrainable); making the live summary one more softmax
    target instead lets the attention drive its weight to zero, after which
    no gradient can restore it (measured in both cases).  With no history
    this is the identity.
    """
    if bank_matrix is None or bank_matrix.shape[1] == 0:
        return h_tilde
    key_mat = ad.matmul(params["inter.key_w"], bank_matrix)
    return ad.add(h_tilde, _attend(params, "inter", h_tilde, key_mat, bank_matrix))


def _attend(params, side: str, anchor, key_mat, value_mat):
    k = ad._val(anchor).shape[0]
    query = ad.matmul(params[f"{side}.query_w"], anchor)
    pre = ad.tanh(ad.add(key_mat, ad.reshape(query, (k, 1))))
    scores = ad.matmul(params[f"{side}.score_vec"], pre)
    return ad.matmul(value_mat, ad.softmax(scores))


class QueryContext:
    """Per-query caches: shared embedding rows, per-location context vectors,
    and the projected history bank for the query's user."""

    def __init__(self, params, cfg: ModelConfig, q: Query,
                 bank: HistoryBank | None = None, exclude: int | None = None):
        self.params = params
        self.cfg = cfg
        self.q = q
        self._ctx: dict[int, object] = {}
        self.bank_matrix = bank.matrix(q.user, exclude) if bank is not None else None
        self._inter_keys = None

    def ctx(self, loc: int):
        got = self._ctx.get(loc)
        if got is None:
            got = context_vector(self.params, self.cfg, self.q.user, loc, self.q.depart)
            self._ctx[loc] = got
        return got

    def inter_keys(self):
        if self.bank_matrix is not None and self._inter_keys is None:
            self._inter_keys = ad.matmul(self.params["inter.key_w"], self.bank_matrix)
        return self._inter_keys


def initial_state(qc: QueryContext) -> MovingState:
    """Moving state of the singleton prefix [source]; g is zero."""
    cfg, params = qc.cfg, qc.params
    h = _gru(params, qc.ctx(qc.q.source), np.zeros(cfg.k_state))
    return _finish_state(qc, (qc.q.source,), (), (), h, g_acc=0.0)


def _finish_state(qc: QueryContext, path, prev_hiddens, prev_keys, h_new, g_acc,
                  key_new=None, query=None, prev_mats=None) -> MovingState:
    """Apply both attentions to a freshly extended hidden state.

    ``prev_mats`` optionally carries the stacked (keys, hiddens) of the shared
    prefix so sibling candidates of one expansion reuse them.
    """
    cfg, params = qc.cfg, qc.params
    hiddens = prev_hiddens + (h_new,)
    if cfg.attention_mode == "NA":
        return MovingState(path, hiddens, (), h_new, h_new, g_acc)
    if key_new is None:
        key_new = ad.matmul(params["intra.key_w"], h_new)
    if query is None:
        query = ad.matmul(params["intra.query_w"], h_new)
    keys = prev_keys + (key_new,)
    if prev_mats is not None:
        key_mat = ad.append_col(prev_mats[0], key_new)
        hid_mat = ad.append_col(prev_mats[1], h_new)
    else:
        key_mat = ad.stack_cols(list(keys))
        hid_mat = ad.stack_cols(list(hiddens))
    pre = ad.tanh(ad.add(key_mat, ad.reshape(query, (cfg.k_state, 1))))
    alpha = ad.softmax(ad.matmul(params["intra.score_vec"], pre))
    h_tilde = ad.matmul(hid_mat, alpha)
    if cfg.attention_mode == "IA" or qc.bank_matrix is None:
        h_state = h_tilde
    else:
        # residual history attention; see inter_attention for the rationale
        pre = ad.tanh(ad.add(qc.inter_keys(), ad.reshape(
            ad.matmul(params["inter.query_w"], h_tilde), (cfg.k_state, 1))))
        beta = ad.softmax(ad.matmul(params["inter.score_vec"], pre))
        h_state = ad.add(h_tilde, ad.matmul(qc.bank_matrix, beta))
    return MovingState(path, hiddens, keys, h_tilde, h_state, g_acc)


def _gru_batch(params, x_mat, h_prev, n: int):
    """One recurrent step for n candidate inputs sharing the previous state."""
    hp = ad.tile_col(h_prev, n)
    xh = ad.vstack(x_mat, hp)
    k = ad._val(h_prev).shape[0]
    z = ad.sigmoid(ad.add(ad.matmul(params["gru.update_w"], xh),
                          ad.reshape(params["gru.update_b"], (k, 1))))
    r = ad.sigmoid(ad.add(ad.matmul(params["gru.reset_w"], xh),
                          ad.reshape(params["gru.reset_b"], (k, 1))))
    gated = ad.vstack(x_mat, ad.mul(r, hp))
    h_cand = ad.tanh(ad.add(ad.matmul(params["gru.cand_w"], gated),
                            ad.reshape(params["gru.cand_b"], (k, 1))))
    return ad.add(ad.mul(ad.sub(1.0, z), hp), ad.mul(z, h_cand))


def expand_candidates(net: RoadNetwork, qc: QueryContext, state: MovingState):
    """Hypothetically extend one step to every road successor.

    Returns (neighbors, extended states, transition distribution).  The
    distribution is softmax over exactly the successors, floored at the
    configured minimum and renormalized; extended states carry no g yet.
    The recurrent step and both attention stages run batched over the
    candidates (they share the prefix, so the score matrices are
    rectangular: candidates x attention targets).
    """
    params, cfg = qc.params, qc.cfg
    here = state.path[-1]
    nbrs = net.out_edges[here]
    if not nbrs:
        raise DeadEndError(f"location {here} has no successors")
    n = len(nbrs)
    k = cfg.k_state
    x_mat = ad.stack_cols([qc.ctx(loc) for loc in nbrs])
    h_mat = _gru_batch(params, x_mat, state.hiddens[-1], n)

    if cfg.attention_mode == "NA":
        h_tilde_mat = h_state_mat = h_mat
        keys_new = None
    else:
        keys_new = ad.matmul(params["intra.key_w"], h_mat)
        queries = ad.matmul(params["intra.query_w"], h_mat)
        i = len(state.keys)
        if i:
            key_pref = ad.stack_cols(list(state.keys))
            hid_pref = ad.stack_cols(list(state.hiddens))
            # candidate-major blocks: tanh(key_j + query_c) for every (c, j)
            pre = ad.tanh(ad.add(ad.tile_cols(key_pref, n), ad.repeat_cols(queries, i)))
            s_pref = ad.reshape(ad.matmul(params["intra.score_vec"], pre), (n, i))
            s_self = ad.matmul(params["intra.score_vec"],
                               ad.tanh(ad.add(keys_new, queries)))
            alpha = ad.segment_softmax(ad.append_col(s_pref, s_self), np.array([0]))
            h_tilde_mat = ad.add(
                ad.matmul(hid_pref, ad.transpose(ad.slice_cols(alpha, 0, i))),
                ad.mul(h_mat, ad.col(alpha, i)))
        else:
            h_tilde_mat = h_mat  # singleton prefix: attention over one step
        if cfg.attention_mode == "IA" or qc.bank_matrix is None:
            h_state_mat = h_tilde_mat
        else:
            nb = qc.bank_matrix.shape[1]
            q2 = ad.matmul(params["inter.query_w"], h_tilde_mat)
            pre = ad.tanh(ad.add(ad.tile_cols(qc.inter_keys(), n), ad.repeat_cols(q2, nb)))
            s2 = ad.reshape(ad.matmul(params["inter.score_vec"], pre), (n, nb))
            beta = ad.segment_softmax(s2, np.array([0]))
            h_state_mat = ad.add(h_tilde_mat,
                                 ad.matmul(qc.bank_matrix, ad.transpose(beta)))

    exts = []
    for c, loc in enumerate(nbrs):
        h_new = ad.col(h_mat, c)
        if cfg.attention_mode == "NA":
            ext = MovingState(state.path + (loc,), state.hiddens + (h_new,), (),
                              h_new, h_new, None)
        else:
            ext = MovingState(state.path + (loc,), state.hiddens + (h_new,),
                              state.keys + (ad.col(keys_new, c),),
                              ad.col(h_tilde_mat, c), ad.col(h_state_mat, c), None)
        exts.append(ext)
    scores = ad.matmul(params["trans.score_vec"], h_state_mat)
    floored = ad.maximum(ad.softmax(scores), cfg.prob_floor)
    probs = ad.div(floored, ad.vsum(floored))
    return nbrs, exts, probs


def step_state(net: RoadNetwork, qc: QueryContext, state: MovingState, next_loc: int):
    """Advance the state along an observed transition, accumulating -log p."""
    nbrs, exts, probs = expand_candidates(net, qc, state)
    try:
        k = nbrs.index(next_loc)
    except ValueError:
        raise DataError(f"path uses non-edge ({state.path[-1]}, {next_loc})") from None
    cost = ad.neg(ad.log(ad.element(probs, k)))
    ext = exts[k]
    ext.g_acc = ad.add(state.g_acc, cost)
    return ext


def encode_prefix(params, cfg: ModelConfig, net: RoadNetwork, q: Query,
                  prefix: tuple[int, ...], bank: HistoryBank | None = None,
                  exclude: int | None = None) -> MovingState:
    """Moving state and accumulated cost of an observed prefix from the source."""
    if not prefix:
        raise DataError("prefix must be non-empty")
    if prefix[0] != q.source:
        raise DataError(f"prefix must start at the query source {q.source}")
    qc = QueryContext(params, cfg, q, bank, exclude)
    state = initial_state(qc)
    for loc in prefix[1:]:
        state = step_state(net, qc, state, loc)
    return state


def transition_probs(params, cfg: ModelConfig, net: RoadNetwork, q: Query,
                     prefix: tuple[int, ...], bank: HistoryBank | None = None) -> dict[int, float]:
    """Next-location distribution over road successors of the prefix tip."""
    state = encode_prefix(params, cfg, net, q, prefix, bank)
    qc = QueryContext(params, cfg, q, bank)
    nbrs, _, probs = expand_candidates(net, qc, state)
    pd = ad._val(probs)
    return {loc: float(pd[i]) for i, loc in enumerate(nbrs)}


def g_cost(params, cfg: ModelConfig, net: RoadNetwork, q: Query,
           path: tuple[int, ...], bank: HistoryBank | None = None,
           exclude: int | None = None):
    """Sum of -log transition probabilities along a path from the source."""
    return encode_prefix(params, cfg, net, q, path, bank, exclude).g_acc


def trajectory_query(traj: Trajectory) -> Query:
    """Query context of a training trajectory (no length-3 requirement)."""
    locs = traj.locations
    return Query(source=locs[0], destination=locs[-1], depart=traj.start_time, user=traj.user)


def trajectory_g(params, cfg: ModelConfig, net: RoadNetwork, traj: Trajectory,
                 bank: HistoryBank | None = None, exclude: int | None = None):
    q = trajectory_query(traj)
    return g_cost(params, cfg, net, q, traj.locations, bank, exclude)


def rnn_loss(model, net: RoadNetwork, dataset: Dataset,
             bank: HistoryBank | None = None, split: str = "train"):
    """Total observed-path cost over a dataset split (differentiable)."""
    indexed = [(i, t) for i, t in enumerate(dataset.trajectories)
               if (not split) or t.split == split]
    if not indexed:
        raise DataError(f"no trajectories in split {split!r}")
    params = model.graph_params()
    terms = [trajectory_g(params, model.cfg, net, t, bank, exclude=i) for i, t in indexed]
    return ad.add_n(terms)


def encode_states(params, cfg: ModelConfig, net: RoadNetwork, q: Query,
                  locs: tuple[int, ...], bank: HistoryBank | None = None,
                  exclude: int | None = None) -> list[MovingState]:
    """Moving states of every prefix of an observed path, without costs.

    Cheaper than encode_prefix when only the states are needed (the value
    model's inputs): no candidate expansion happens.
    """
    qc = QueryContext(params, cfg, q, bank, exclude)
    state = initial_state(qc)
    states = [state]
    for loc in locs[1:]:
        if loc not in net.out_edges[state.path[-1]]:
            raise DataError(f"path uses non-edge ({state.path[-1]}, {loc})")
        h_new = _gru(params, qc.ctx(loc), state.hiddens[-1])
        state = _finish_state(qc, state.path + (loc,), state.hiddens, state.keys, h_new, g_acc=None)
        states.append(state)
    return states
