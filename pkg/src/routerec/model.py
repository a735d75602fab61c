"""Model assembly: every learnable array, created in a fixed order.

A ``Model`` owns the parameter store shared by both cost components.  Graph
views hand out ``Param`` leaves for training; frozen views hand out the bare
arrays so inference runs without tape overhead.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from . import autodiff as ad
from .embeddings import ModelConfig, add_embedding_params

MLP_HIDDEN = 64


class Model:
    def __init__(self, cfg: ModelConfig, store: ad.ParamStore, n_users: int, n_locations: int):
        self.cfg = cfg
        self.store = store
        self.n_users = n_users
        self.n_locations = n_locations

    @classmethod
    def new(cls, cfg: ModelConfig, n_users: int, n_locations: int, seed: int = 0) -> "Model":
        store = ad.ParamStore(seed=seed, init_scale=cfg.init_scale)
        add_embedding_params(store, cfg, n_users, n_locations)

        k_in = cfg.k_context + cfg.k_state
        for gate in ("update", "reset", "cand"):
            store.add(f"gru.{gate}_w", (cfg.k_state, k_in))
            store.add(f"gru.{gate}_b", (cfg.k_state,), init="zeros")

        for side in ("intra", "inter"):
            store.add(f"{side}.key_w", (cfg.k_state, cfg.k_state))
            store.add(f"{side}.query_w", (cfg.k_state, cfg.k_state))
            store.add(f"{side}.score_vec", (cfg.k_state,))

        store.add("trans.score_vec", (cfg.k_state,))

        k_score = cfg.k_node // cfg.heads
        fused = cfg.heads * k_score
        if cfg.k_loc != cfg.k_node:
            store.add("gat.in_proj", (cfg.k_node, cfg.k_loc))
        for z in range(cfg.gat_layers):
            store.add(f"gat.{z}.att_anchor", (fused, cfg.k_node))
            store.add(f"gat.{z}.att_nbr", (fused, cfg.k_node))
            store.add(f"gat.{z}.att_state", (fused, cfg.k_state))
            store.add(f"gat.{z}.att_dist", (fused, cfg.k_dist))
            store.add(f"gat.{z}.score_vec", (fused,))
            store.add(f"gat.{z}.mix", (cfg.k_node, cfg.k_node))

        k_mlp_in = cfg.k_state + 2 * cfg.k_node + cfg.k_dist
        store.add("mlp.w1", (MLP_HIDDEN, k_mlp_in))
        store.add("mlp.b1", (MLP_HIDDEN,), init="zeros")
        store.add("mlp.w2", (MLP_HIDDEN, MLP_HIDDEN))
        store.add("mlp.b2", (MLP_HIDDEN,), init="zeros")
        store.add("mlp.out_w", (MLP_HIDDEN,))
        store.add("mlp.out_b", (), init="zeros")
        return cls(cfg, store, n_users, n_locations)

    def graph_params(self) -> dict[str, ad.Param]:
        """Parameter leaves for building a differentiable graph."""
        return self.store.params()

    def frozen_params(self) -> dict[str, np.ndarray]:
        """Bare arrays: the no-grad view used for search and evaluation."""
        return {name: p.data for name, p in self.store.params().items()}

    def zero_params(self) -> "Model":
        """Set every parameter to zero (uniform-transition baseline)."""
        for p in self.store.params().values():
            p.data.fill(0.0)
        return self

    def copy_params(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.store.params().items()}

    def set_params(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, arr in snapshot.items():
            self.store[name].data[...] = arr


def save_checkpoint(model: Model, path: str, extras: dict | None = None) -> None:
    config = {
        "model": asdict(model.cfg),
        "n_users": model.n_users,
        "n_locations": model.n_locations,
    }
    ad.save_store(model.store, path, config=config, extras=extras)


def load_checkpoint(path: str) -> tuple[Model, dict]:
    store, config, extras = ad.load_store(path)
    cfg = ModelConfig(**config["model"])
    model = Model(cfg, store, int(config["n_users"]), int(config["n_locations"]))
    return model, extras
