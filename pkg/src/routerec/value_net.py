"""Remaining-cost model: graph attention over the road network plus an MLP head.

Node representations are recomputed per evaluation because the attention
scores are conditioned on the querying user's moving state (and on the
discretized pairwise distance).  All heads of a layer are evaluated fused:
parameters are stacked so one pass over the edge list covers every head.

Attention neighborhoods are the out-neighbors plus a self-loop, so dead-end
nodes keep a non-empty softmax domain.  The score applies a tanh before the
projection onto the score vector; a purely linear score would make the
anchor and moving-state terms cancel inside the per-anchor softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .embeddings import ModelConfig, distance_bin
from .network import RoadNetwork, euclid

MLP_ZERO_OUTPUT = float(np.log(2.0))  # softplus(0): the all-zero-weights cost


@dataclass
class EdgeIndex:
    """Road graph flattened to (anchor, neighbor) pairs sorted by anchor.

    Each anchor's segment is contiguous and non-empty (self-loops added),
    which lets the attention softmax run with segment reductions.  Scatter
    plans make the gather backwards segment-reductions too; wide replicas
    (for fused multi-state evaluation) are cached per copy count.
    """

    anchor: np.ndarray      # (E,) anchor node per pair
    nbr: np.ndarray         # (E,) neighborhood member per pair
    starts: np.ndarray      # (n,) first pair index per anchor
    bins: np.ndarray        # (E,) distance bin per pair
    n_nodes: int
    plan_anchor: ad.ScatterPlan | None = None
    plan_nbr: ad.ScatterPlan | None = None
    plan_bins: ad.ScatterPlan | None = None
    plan_copy: ad.ScatterPlan | None = None  # set on wide replicas only
    _wide: dict = field(default_factory=dict, repr=False)

    def with_plans(self) -> "EdgeIndex":
        self.plan_anchor = ad.ScatterPlan(self.anchor)
        self.plan_nbr = ad.ScatterPlan(self.nbr)
        self.plan_bins = ad.ScatterPlan(self.bins)
        return self


def build_edge_index(net: RoadNetwork, cfg: ModelConfig) -> EdgeIndex:
    anchors, nbrs, bins, starts = [], [], [], []
    for i in range(net.num_locations):
        starts.append(len(anchors))
        members = sorted(set(net.out_edges[i]) | {i})
        for j in members:
            anchors.append(i)
            nbrs.append(j)
            bins.append(distance_bin(euclid(net, i, j), cfg.dist_bins))
    return EdgeIndex(
        anchor=np.asarray(anchors, dtype=np.intp),
        nbr=np.asarray(nbrs, dtype=np.intp),
        starts=np.asarray(starts, dtype=np.intp),
        bins=np.asarray(bins, dtype=np.intp),
        n_nodes=net.num_locations,
    ).with_plans()


def _base_reprs(params, cfg: ModelConfig):
    """Layer-0 node matrix (k_node x n): location embeddings, projected if needed."""
    table_t = ad.transpose(params["emb.loc"])
    if "gat.in_proj" in _names(params):
        return ad.matmul(params["gat.in_proj"], table_t)
    return table_t


def _names(params) -> set:
    return params.keys() if hasattr(params, "keys") else set()


def _layer(params, cfg: ModelConfig, ei: EdgeIndex, reprs, h_state, z: int,
           return_alpha: bool = False):
    k_score = cfg.k_node // cfg.heads
    anchor_feats = ad.gather_cols(ad.matmul(params[f"gat.{z}.att_anchor"], reprs),
                                  ei.anchor, plan=ei.plan_anchor)
    nbr_feats = ad.gather_cols(ad.matmul(params[f"gat.{z}.att_nbr"], reprs),
                               ei.nbr, plan=ei.plan_nbr)
    pre = ad.add(anchor_feats, nbr_feats)
    if cfg.gat_mode == "i-GAT":
        dist_feats = ad.matmul(params[f"gat.{z}.att_dist"],
                               ad.transpose(ad.gather_rows(params["emb.dist"], ei.bins,
                                                           plan=ei.plan_bins)))
        pre = ad.add(pre, dist_feats)
        if cfg.use_moving_state and h_state is not None:
            state_feat = ad.matmul(params[f"gat.{z}.att_state"], h_state)
            pre = ad.add(pre, ad.reshape(state_feat, (cfg.heads * k_score, 1)))
    weighted_pre = ad.mul(ad.tanh(pre), ad.reshape(params[f"gat.{z}.score_vec"],
                                                   (cfg.heads * k_score, 1)))
    scores = ad.block_rowsum(weighted_pre, k_score)           # (heads, E)
    alpha = ad.segment_softmax(scores, ei.starts)
    mixed = ad.gather_cols(ad.matmul(params[f"gat.{z}.mix"], reprs),
                           ei.nbr, plan=ei.plan_nbr)
    weighted = ad.mul(mixed, ad.repeat_rows(alpha, k_score))
    out = ad.relu(ad.segment_sum_cols(weighted, ei.starts))   # (k_node, n)
    if return_alpha:
        return out, alpha
    return out


def node_representations(params, cfg: ModelConfig, ei: EdgeIndex, h_state=None):
    """Stack of graph-attention layers conditioned on one moving state."""
    reprs = _base_reprs(params, cfg)
    for z in range(cfg.gat_layers):
        reprs = _layer(params, cfg, ei, reprs, h_state, z)
    return reprs


def wide_index(ei: EdgeIndex, copies: int) -> EdgeIndex:
    """Edge index of ``copies`` disjoint replicas of the graph (cached)."""
    if copies not in ei._wide:
        n, e = ei.n_nodes, ei.anchor.shape[0]
        offsets_nodes = (np.arange(copies) * n).repeat(e)
        offsets_edges = (np.arange(copies) * e).repeat(ei.starts.shape[0])
        wide = EdgeIndex(
            anchor=np.tile(ei.anchor, copies) + offsets_nodes,
            nbr=np.tile(ei.nbr, copies) + offsets_nodes,
            starts=np.tile(ei.starts, copies) + offsets_edges,
            bins=np.tile(ei.bins, copies),
            n_nodes=n * copies,
        ).with_plans()
        wide.plan_copy = ad.ScatterPlan(np.arange(copies, dtype=np.intp).repeat(e))
        ei._wide[copies] = wide
    return ei._wide[copies]


def _layer_multi(params, cfg: ModelConfig, wide: EdgeIndex, reprs, state_mat, z: int):
    """One attention layer over stacked graph replicas, each conditioned on
    its own moving state (column of ``state_mat``)."""
    k_score = cfg.k_node // cfg.heads
    anchor_feats = ad.gather_cols(ad.matmul(params[f"gat.{z}.att_anchor"], reprs),
                                  wide.anchor, plan=wide.plan_anchor)
    nbr_feats = ad.gather_cols(ad.matmul(params[f"gat.{z}.att_nbr"], reprs),
                               wide.nbr, plan=wide.plan_nbr)
    pre = ad.add(anchor_feats, nbr_feats)
    if cfg.gat_mode == "i-GAT":
        dist_feats = ad.matmul(params[f"gat.{z}.att_dist"],
                               ad.transpose(ad.gather_rows(params["emb.dist"], wide.bins,
                                                           plan=wide.plan_bins)))
        pre = ad.add(pre, dist_feats)
        if cfg.use_moving_state and state_mat is not None:
            per_edge_state = ad.gather_cols(ad.matmul(params[f"gat.{z}.att_state"], state_mat),
                                            wide.plan_copy.idx, plan=wide.plan_copy)
            pre = ad.add(pre, per_edge_state)
    weighted_pre = ad.mul(ad.tanh(pre), ad.reshape(params[f"gat.{z}.score_vec"],
                                                   (cfg.heads * k_score, 1)))
    scores = ad.block_rowsum(weighted_pre, k_score)
    alpha = ad.segment_softmax(scores, wide.starts)
    mixed = ad.gather_cols(ad.matmul(params[f"gat.{z}.mix"], reprs),
                           wide.nbr, plan=wide.plan_nbr)
    weighted = ad.mul(mixed, ad.repeat_rows(alpha, k_score))
    return ad.relu(ad.segment_sum_cols(weighted, wide.starts))


def node_representations_multi(params, cfg: ModelConfig, ei: EdgeIndex, h_states: list):
    """Node representations for several moving states in one fused pass.

    Returns a (k_node, len(h_states) * n) matrix: block c holds the
    representations conditioned on h_states[c].
    """
    copies = len(h_states)
    wide = wide_index(ei, copies)
    state_mat = None
    if cfg.gat_mode == "i-GAT" and cfg.use_moving_state and any(h is not None for h in h_states):
        state_mat = ad.stack_cols(list(h_states))
    reprs = ad.tile_cols(_base_reprs(params, cfg), copies)
    for z in range(cfg.gat_layers):
        reprs = _layer_multi(params, cfg, wide, reprs, state_mat, z)
    return reprs


def h_estimate_multi(params, cfg: ModelConfig, reprs, h_states: list,
                     locs: list[int], dest: int, meters: list[float], stride: int):
    """Cost-head evaluation over several (state, location) pairs at once.

    ``reprs`` is either the wide matrix from node_representations_multi
    (stride = n_nodes) or one shared state-independent matrix (stride = 0).
    Returns a vector of non-negative cost estimates.
    """
    cols = []
    for c, (h_state, loc, m) in enumerate(zip(h_states, locs, meters)):
        state_in = h_state if (cfg.use_moving_state and h_state is not None) \
            else np.zeros(cfg.k_state)
        cols.append(ad.concat([
            state_in,
            ad.col(reprs, c * stride + loc),
            ad.col(reprs, c * stride + dest),
            ad.row(params["emb.dist"], distance_bin(m, cfg.dist_bins)),
        ]))
    x = ad.stack_cols(cols)
    hidden = ad.relu(ad.add(ad.matmul(params["mlp.w1"], x),
                            ad.reshape(params["mlp.b1"], (-1, 1))))
    hidden = ad.relu(ad.add(ad.matmul(params["mlp.w2"], hidden),
                            ad.reshape(params["mlp.b2"], (-1, 1))))
    return ad.softplus(ad.add(ad.matmul(params["mlp.out_w"], hidden), params["mlp.out_b"]))


def layer_attention(params, cfg: ModelConfig, ei: EdgeIndex, h_state=None, z: int = 0):
    """Attention weights (heads x E) of one layer, for inspection and tests."""
    reprs = _base_reprs(params, cfg)
    for zz in range(z):
        reprs = _layer(params, cfg, ei, reprs, h_state, zz)
    _, alpha = _layer(params, cfg, ei, reprs, h_state, z, return_alpha=True)
    return ad._val(alpha)


def attention_score(params, cfg: ModelConfig, n_anchor, n_nbr, h_state,
                    meters: float, z: int = 0, head: int = 0) -> float:
    """Unnormalized score between two node vectors for one head (diagnostic)."""
    k_score = cfg.k_node // cfg.heads
    rows = slice(head * k_score, (head + 1) * k_score)
    pre = (ad._val(params[f"gat.{z}.att_anchor"])[rows] @ np.asarray(n_anchor, dtype=np.float64)
           + ad._val(params[f"gat.{z}.att_nbr"])[rows] @ np.asarray(n_nbr, dtype=np.float64))
    if cfg.gat_mode == "i-GAT":
        b = distance_bin(meters, cfg.dist_bins)
        pre = pre + ad._val(params[f"gat.{z}.att_dist"])[rows] @ ad._val(params["emb.dist"])[b]
        if cfg.use_moving_state and h_state is not None:
            pre = pre + ad._val(params[f"gat.{z}.att_state"])[rows] @ np.asarray(h_state, dtype=np.float64)
    return float(ad._val(params[f"gat.{z}.score_vec"])[rows] @ np.tanh(pre))


def h_estimate(params, cfg: ModelConfig, reprs, h_state, loc: int, dest: int,
               meters: float):
    """Estimated remaining cost from ``loc`` to ``dest`` (non-negative)."""
    state_in = h_state if (cfg.use_moving_state and h_state is not None) \
        else np.zeros(cfg.k_state)
    x = ad.concat([
        state_in,
        ad.col(reprs, loc),
        ad.col(reprs, dest),
        ad.row(params["emb.dist"], distance_bin(meters, cfg.dist_bins)),
    ])
    hidden = ad.relu(ad.add(ad.matmul(params["mlp.w1"], x), params["mlp.b1"]))
    hidden = ad.relu(ad.add(ad.matmul(params["mlp.w2"], hidden), params["mlp.b2"]))
    return ad.softplus(ad.add(ad.dot(params["mlp.out_w"], hidden), params["mlp.out_b"]))


def estimate_for(params, cfg: ModelConfig, net: RoadNetwork, ei: EdgeIndex,
                 h_state, loc: int, dest: int):
    """Node representations plus cost head in one call."""
    reprs = node_representations(params, cfg, ei, h_state)
    return h_estimate(params, cfg, reprs, h_state, loc, dest, euclid(net, loc, dest))


def association_scores(reprs, loc: int, dest: int) -> np.ndarray:
    """Per-node affinity to the current location and destination."""
    r = ad._val(reprs)
    return r.T @ (r[:, loc] + r[:, dest])


def write_association_csv(path: str, net: RoadNetwork, reprs, loc: int, dest: int) -> None:
    scores = association_scores(reprs, loc, dest)
    with open(path, "w", encoding="utf-8") as f:
        f.write("location,x,y,score\n")
        for i in range(net.num_locations):
            f.write(f"{i},{net.coords[i, 0]!r},{net.coords[i, 1]!r},{scores[i]!r}\n")
