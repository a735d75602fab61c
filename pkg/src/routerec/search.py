"""Best-first route search over prefix states with learned costs.

The frontier orders whole path hypotheses, not graph nodes: the observed
cost of a prefix depends on its entire history through the recurrent state,
so node-level dominance pruning would be unsound.  Paths stay simple, pop
order is the total order (f, g, insertion), and exhausting the expansion
budget is an error rather than a silent partial answer.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .data import Query
from .model import Model
from .network import RoadNetwork, euclid
from .prefix_cost import (
    HistoryBank,
    MovingState,
    QueryContext,
    expand_candidates,
    initial_state,
)
from .value_net import (
    build_edge_index,
    h_estimate_multi,
    node_representations,
    node_representations_multi,
)

HEURISTIC_MODES = ("value-net", "o-GAT", "SP", "ED", "zero")


class SearchBudgetError(RuntimeError):
    """Expansion budget exhausted before reaching the destination."""


class UnreachableError(RuntimeError):
    """No simple path from source to destination exists in the search tree."""


@dataclass
class SearchConfig:
    heuristic_mode: str = "value-net"
    max_expansions: int = 10_000
    ed_lambda: float | None = None  # cost-per-meter scale, required for ED mode

    def __post_init__(self):
        if self.heuristic_mode not in HEURISTIC_MODES:
            raise ValueError(
                f"unknown heuristic mode {self.heuristic_mode!r}; valid: {', '.join(HEURISTIC_MODES)}")
        if self.max_expansions < 1:
            raise ValueError("max_expansions must be >= 1")


@dataclass
class Diagnostics:
    expansions: int = 0
    pushes: int = 0
    peak_frontier: int = 0
    returned_f: float = math.nan
    returned_g: float = math.nan
    prob_sum_max_err: float = 0.0


@dataclass
class RouteRecord:
    route: tuple[int, ...]
    query: Query
    heuristic_mode: str
    diagnostics: Diagnostics
    step_probs: list[float] = field(default_factory=list)
    f_trace: list[float] = field(default_factory=list)


class Searcher:
    """Reusable search context over one frozen model snapshot."""

    def __init__(self, model: Model, net: RoadNetwork, bank: HistoryBank | None,
                 scfg: SearchConfig):
        self.net = net
        self.bank = bank
        self.scfg = scfg
        self.params = model.frozen_params()
        self.cfg = model.cfg
        if scfg.heuristic_mode == "ED" and scfg.ed_lambda is None:
            raise ValueError("ED heuristic needs ed_lambda (cost per meter)")
        self.h_cfg = self.cfg
        if scfg.heuristic_mode == "o-GAT":
            self.h_cfg = replace(self.cfg, gat_mode="o-GAT")
        self._needs_reprs = scfg.heuristic_mode in ("value-net", "o-GAT")
        self.edge_index = build_edge_index(net, self.cfg) if self._needs_reprs else None
        # representations are state-independent unless context-aware scoring
        # consumes the moving state; then they are rebuilt per candidate
        self._static_reprs = None
        if self._needs_reprs and not (self.h_cfg.gat_mode == "i-GAT" and self.h_cfg.use_moving_state):
            self._static_reprs = node_representations(self.params, self.h_cfg, self.edge_index, None)

    def heuristic_batch(self, states: list[MovingState], dest: int) -> list[float]:
        """Estimated remaining cost from each state's tip to the destination."""
        mode = self.scfg.heuristic_mode
        locs = [s.path[-1] for s in states]
        if mode == "zero":
            return [0.0] * len(states)
        if mode == "ED":
            return [self.scfg.ed_lambda * euclid(self.net, loc, dest) for loc in locs]
        if mode == "SP":
            table = self.params["emb.loc"]
            return [float(ad.softplus(np.dot(table[loc], table[dest]))) for loc in locs]
        meters = [euclid(self.net, loc, dest) for loc in locs]
        h_states = [s.h_state if self.h_cfg.use_moving_state else None for s in states]
        if self._static_reprs is not None:
            est = h_estimate_multi(self.params, self.h_cfg, self._static_reprs,
                                   h_states, locs, dest, meters, stride=0)
        else:
            reprs = node_representations_multi(self.params, self.h_cfg,
                                               self.edge_index, h_states)
            est = h_estimate_multi(self.params, self.h_cfg, reprs, h_states,
                                   locs, dest, meters, stride=self.edge_index.n_nodes)
        return [float(v) for v in np.atleast_1d(ad._val(est))]

    def heuristic(self, state: MovingState, dest: int) -> float:
        return self.heuristic_batch([state], dest)[0]

    def run(self, q: Query) -> tuple[tuple[int, ...], Diagnostics]:
        net, dest = self.net, q.destination
        net.check_location(q.source)
        net.check_location(dest)
        if not net.out_edges[q.source]:
            raise UnreachableError(f"source {q.source} has no outgoing edges")
        diag = Diagnostics()
        qc = QueryContext(self.params, self.cfg, q, self.bank)
        start = initial_state(qc)
        seq = 0
        frontier: list[tuple[float, float, int, MovingState]] = []
        heapq.heappush(frontier, (self.heuristic(start, dest), 0.0, seq, start))
        diag.pushes = 1
        diag.peak_frontier = 1
        while frontier:
            f, g, _, state = heapq.heappop(frontier)
            if state.path[-1] == dest:
                diag.returned_f = f
                diag.returned_g = g
                return state.path, diag
            if diag.expansions >= self.scfg.max_expansions:
                raise SearchBudgetError(
                    f"expansion budget {self.scfg.max_expansions} exhausted "
                    f"(frontier {len(frontier)}, best f {f:.3f})")
            diag.expansions += 1
            if not net.out_edges[state.path[-1]]:
                continue
            nbrs, exts, probs = expand_candidates(net, qc, state)
            pvec = ad._val(probs)
            diag.prob_sum_max_err = max(diag.prob_sum_max_err, abs(float(pvec.sum()) - 1.0))
            on_path = set(state.path)
            keep = [k for k, loc in enumerate(nbrs) if loc not in on_path]
            if not keep:
                continue
            h_values = self.heuristic_batch([exts[k] for k in keep], dest)
            for k, h in zip(keep, h_values):
                g_child = g + (-math.log(float(pvec[k])))
                child = exts[k]
                child.g_acc = g_child
                seq += 1
                heapq.heappush(frontier, (g_child + h, g_child, seq, child))
                diag.pushes += 1
            diag.peak_frontier = max(diag.peak_frontier, len(frontier))
        raise UnreachableError(f"no simple path from {q.source} to {dest}")


def astar(model: Model, net: RoadNetwork, q: Query, bank: HistoryBank | None,
          scfg: SearchConfig) -> tuple[tuple[int, ...], Diagnostics]:
    """One-off search; build a Searcher directly when running many queries."""
    return Searcher(model, net, bank, scfg).run(q)


def recommend(model: Model, net: RoadNetwork, q: Query, bank: HistoryBank | None,
              scfg: SearchConfig) -> RouteRecord:
    """Search plus a per-step probability and f trace for report emission."""
    searcher = Searcher(model, net, bank, scfg)
    route, diag = searcher.run(q)
    qc = QueryContext(searcher.params, searcher.cfg, q, bank)
    state = initial_state(qc)
    g = 0.0
    f_trace = [g + searcher.heuristic(state, q.destination)]
    step_probs = []
    for loc in route[1:]:
        nbrs, exts, probs = expand_candidates(net, qc, state)
        k = nbrs.index(loc)
        p = float(ad._val(probs)[k])
        step_probs.append(p)
        g += -math.log(p)
        state = exts[k]
        state.g_acc = g
        f_trace.append(g + searcher.heuristic(state, q.destination))
    return RouteRecord(route=route, query=q, heuristic_mode=scfg.heuristic_mode,
                       diagnostics=diag, step_probs=step_probs, f_trace=f_trace)


def route_geojson(record: RouteRecord, net: RoadNetwork) -> dict:
    """GeoJSON LineString of the route with the search trace as properties."""
    coords = [[float(net.coords[i, 0]), float(net.coords[i, 1])] for i in record.route]
    d = record.diagnostics
    return {
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": coords},
        "properties": {
            "route": list(record.route),
            "source": record.query.source,
            "destination": record.query.destination,
            "user": record.query.user,
            "heuristic_mode": record.heuristic_mode,
            "step_probs": record.step_probs,
            "f_trace": record.f_trace,
            "expansions": d.expansions,
            "pushes": d.pushes,
            "peak_frontier": d.peak_frontier,
            "returned_f": d.returned_f,
        },
    }


def write_route_geojson(path: str, record: RouteRecord, net: RoadNetwork) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(route_geojson(record, net), f, separators=(",", ":"))
        f.write("\n")
