"""Shared embedding tables and context-vector assembly.

Users, locations, weekday/hour indices, and discretized distances each get a
dense embedding; both cost components read the same tables.  Time uses the
UTC calendar with Monday = 1 and hour 00 = 1.  Distance bins are logarithmic,
anchored at 50 m, and saturate at the last bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from . import autodiff as ad

SECONDS_PER_DAY = 86_400
# 1970-01-01 was a Thursday; shift so Monday maps to index 1.
_EPOCH_WEEKDAY_OFFSET = 3

ATTENTION_MODES = ("NA", "IA", "BA")
GAT_MODES = ("i-GAT", "o-GAT")


@dataclass
class ModelConfig:
    """Dimensions and mode switches for the learned cost models."""

    k_user: int = 16        # user embedding
    k_loc: int = 32         # location embedding
    k_weekday: int = 4
    k_hour: int = 8
    k_state: int = 64       # recurrent moving-state width
    k_node: int = 32        # graph-attention node representation width
    k_dist: int = 8         # distance-bin embedding
    heads: int = 4          # graph-attention heads
    gat_layers: int = 2
    dist_bins: int = 16
    prob_floor: float = 1e-8
    init_scale: float = 0.4  # uniform weight-init half-range
    history_cap: int = 32   # most recent trajectories kept per user
    attention_mode: str = "BA"       # NA | IA | BA
    use_moving_state: bool = True    # False: value model never sees the moving state
    gat_mode: str = "i-GAT"          # i-GAT: context-aware scores; o-GAT: plain scores

    def __post_init__(self):
        for f in fields(self):
            if f.type != "int":
                continue
            minimum = 0 if f.name == "gat_layers" else 1
            if getattr(self, f.name) < minimum:
                raise ValueError(f"config field {f.name} must be >= {minimum}")
        if self.k_node % self.heads != 0:
            raise ValueError(f"k_node ({self.k_node}) must be divisible by heads ({self.heads})")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.gat_mode not in GAT_MODES:
            raise ValueError(f"gat_mode must be one of {GAT_MODES}")
        if not 0 < self.prob_floor < 1:
            raise ValueError("prob_floor must be in (0, 1)")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be positive")

    @property
    def k_context(self) -> int:
        return self.k_user + self.k_loc + self.k_weekday + self.k_hour


def time_indices(b: float) -> tuple[int, int]:
    """Map an epoch timestamp to (weekday 1..7, hour 1..24) in UTC."""
    if b < 0:
        raise ValueError("timestamps before the epoch are not supported")
    days, rem = divmod(int(b), SECONDS_PER_DAY)
    weekday = (days + _EPOCH_WEEKDAY_OFFSET) % 7 + 1
    hour = rem // 3600 + 1
    return weekday, hour


def distance_bin(meters: float, n_bins: int) -> int:
    """Logarithmic distance bin: min(floor(log2(1 + meters/50)), n_bins - 1)."""
    if meters < 0:
        raise ValueError(f"distance must be non-negative (got {meters})")
    return min(int(math.log2(1.0 + meters / 50.0)), n_bins - 1)


def add_embedding_params(store: ad.ParamStore, cfg: ModelConfig,
                         n_users: int, n_locations: int) -> None:
    store.add("emb.user", (n_users, cfg.k_user))
    store.add("emb.loc", (n_locations, cfg.k_loc))
    store.add("emb.weekday", (7, cfg.k_weekday))
    store.add("emb.hour", (24, cfg.k_hour))
    store.add("emb.dist", (cfg.dist_bins, cfg.k_dist))


def context_vector(params, cfg: ModelConfig, user: int, loc: int, b: float):
    """user-emb || location-emb || weekday-emb || hour-emb for one step."""
    weekday, hour = time_indices(b)
    return ad.concat([
        ad.row(params["emb.user"], user),
        ad.row(params["emb.loc"], loc),
        ad.row(params["emb.weekday"], weekday - 1),
        ad.row(params["emb.hour"], hour - 1),
    ])
