"""Trajectories, queries, dataset splits, and the synthetic trajectory generator.

A trajectory is a timestamped location sequence bound to a road network; a
query hides everything between its first and last locations.  Users are split
individually (70/10/20) so every evaluated user keeps training history for
the personalization machinery.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .network import MAIN, RoadNetwork, euclid, neighbors

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")

WALK_SPEED_MPS = 8.0
WALK_TEMPERATURE = 1.0
MIN_SPLIT_TRAJS = 10
MIN_QUERY_LEN = 10


class DataError(ValueError):
    """Raised for invalid trajectories, queries, or dataset files."""


@dataclass(frozen=True)
class Trajectory:
    user: int
    steps: tuple[tuple[int, float], ...]  # (location, timestamp seconds)
    split: str | None = None

    @property
    def locations(self) -> tuple[int, ...]:
        return tuple(loc for loc, _ in self.steps)

    @property
    def start_time(self) -> float:
        return self.steps[0][1]

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class Query:
    source: int
    destination: int
    depart: float
    user: int

    def __post_init__(self):
        if self.source == self.destination:
            raise DataError("query source and destination must differ")


@dataclass
class Dataset:
    trajectories: list[Trajectory]

    def __len__(self) -> int:
        return len(self.trajectories)

    def users(self) -> list[int]:
        return sorted({t.user for t in self.trajectories})

    @property
    def num_users(self) -> int:
        return max((t.user for t in self.trajectories), default=-1) + 1

    def by_user(self, split: str | None = None) -> dict[int, list[Trajectory]]:
        out: dict[int, list[Trajectory]] = {}
        for t in self.trajectories:
            if split is None or t.split == split:
                out.setdefault(t.user, []).append(t)
        return out

    def for_split(self, split: str) -> list[Trajectory]:
        return [t for t in self.trajectories if t.split == split]


def validate_trajectory(t: Trajectory, net: RoadNetwork) -> None:
    if len(t.steps) < 2:
        raise DataError(f"trajectory needs >= 2 steps (got {len(t.steps)})")
    prev_ts = None
    for loc, ts in t.steps:
        net.check_location(loc)
        if prev_ts is not None and ts < prev_ts:
            raise DataError(f"timestamps decrease at location {loc}")
        prev_ts = ts
    for (a, _), (b, _) in zip(t.steps, t.steps[1:]):
        if b not in net.out_edges[a]:
            raise DataError(f"trajectory uses non-edge ({a}, {b})")


def bucket(t: Trajectory) -> str:
    """Length class by location count: short 10..20, medium 21..30, long 31+."""
    m = len(t)
    if m < 10:
        return "excluded"
    if m <= 20:
        return "short"
    if m <= 30:
        return "medium"
    return "long"


def make_query(t: Trajectory) -> tuple[Query, tuple[int, ...]]:
    """Turn a trajectory into (query, hidden ground-truth route)."""
    if len(t) < 3:
        raise DataError(f"trajectory too short to query (length {len(t)}, need >= 3)")
    locs = t.locations
    q = Query(source=locs[0], destination=locs[-1], depart=t.start_time, user=t.user)
    return q, locs


def split_dataset(dataset: Dataset, seed: int) -> Dataset:
    """Label each user's trajectories train/val/test at 70/10/20.

    Val and test sizes are floored; the remainder goes to train.  Users with
    fewer than 10 trajectories are dropped (with a logged count).
    """
    if not dataset.trajectories:
        raise DataError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    labeled: list[Trajectory] = []
    dropped = 0
    for user in dataset.users():
        trajs = [t for t in dataset.trajectories if t.user == user]
        if len(trajs) < MIN_SPLIT_TRAJS:
            dropped += 1
            continue
        order = rng.permutation(len(trajs))
        n_val = len(trajs) // 10
        n_test = len(trajs) * 2 // 10
        val_idx = set(order[:n_val].tolist())
        test_idx = set(order[n_val : n_val + n_test].tolist())
        for i, t in enumerate(trajs):
            split = "val" if i in val_idx else "test" if i in test_idx else "train"
            labeled.append(replace(t, split=split))
    if dropped:
        log.warning("split_dataset: dropped %d user(s) with < %d trajectories", dropped, MIN_SPLIT_TRAJS)
    return Dataset(sorted(labeled, key=_canonical_key))


def _canonical_key(t: Trajectory):
    return (t.user, t.start_time, t.steps)


def _bfs_hops(net: RoadNetwork, source: int) -> np.ndarray:
    """Directed hop counts from source; -1 where unreachable."""
    dist = np.full(net.num_locations, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        v = queue.popleft()
        for u in net.out_edges[v]:
            if dist[u] < 0:
                dist[u] = dist[v] + 1
                queue.append(u)
    return dist


def biased_walk(
    net: RoadNetwork,
    rng: np.random.Generator,
    source: int,
    dest: int,
    side_penalty: float,
    spacing: float,
    max_steps: int,
) -> list[int] | None:
    """One goal-biased self-avoiding walk; None when stuck or over budget.

    Each step samples the next edge with probability proportional to
    exp(-(progress/spacing + side_penalty * is_side) / temperature) where
    progress is the change in straight-line distance to the goal.
    """
    path = [source]
    visited = {source}
    here = source
    while here != dest:
        if len(path) - 1 >= max_steps:
            return None
        options = [u for u in neighbors(net, here) if u not in visited]
        if not options:
            return None
        d_here = euclid(net, here, dest)
        scores = np.empty(len(options))
        for k, u in enumerate(options):
            progress = euclid(net, u, dest) - d_here
            is_side = net.edge_class.get((here, u)) != MAIN
            scores[k] = -(progress / spacing + side_penalty * float(is_side)) / WALK_TEMPERATURE
        scores -= scores.max()
        weights = np.exp(scores)
        probs = weights / weights.sum()
        here = options[rng.choice(len(options), p=probs)]
        path.append(here)
        visited.add(here)
    return path


def synth_generate(net: RoadNetwork, n_users: int, per_user: int, seed: int,
                   hop_range: tuple[int, int] = (9, 30)) -> Dataset:
    """Generate a synthetic dataset of user-biased walks on the network.

    Each user draws a main-road preference weight in [0, 2] and a home
    location; sources come from the home neighborhood, destinations from the
    ``hop_range`` shortest-path band (defaults put most trajectories in the
    10..30-location range).  Walks that fail to reach the goal within 4x the
    shortest hop count are resampled (up to 100 times).
    """
    if n_users < 1 or per_user < 1:
        raise DataError("need n_users >= 1 and per_user >= 1")
    rng = np.random.default_rng(seed)
    spacing = float(np.mean([euclid(net, a, b) for a, b in net.edges()]))
    span = float(np.max(net.coords.max(axis=0) - net.coords.min(axis=0)))
    base_time = 1_564_963_200.0  # fixed week origin for departure sampling
    trajectories: list[Trajectory] = []
    for user in range(n_users):
        # high preference weight means side roads are avoided
        preference = float(rng.uniform(0.0, 2.0))
        home = int(rng.integers(net.num_locations))
        home_pool = [
            i for i in range(net.num_locations)
            if euclid(net, home, i) <= 0.35 * span and net.out_edges[i]
        ]
        for _ in range(per_user):
            traj = _one_walk(net, rng, home_pool, preference, spacing, base_time, hop_range)
            trajectories.append(replace(traj, user=user))
    return Dataset(sorted(trajectories, key=_canonical_key))


def _one_walk(net, rng, home_pool, preference, spacing, base_time, hop_range) -> Trajectory:
    for _ in range(100):
        source = int(home_pool[rng.integers(len(home_pool))])
        hops = _bfs_hops(net, source)
        candidates = np.flatnonzero((hops >= hop_range[0]) & (hops <= hop_range[1]))
        if candidates.size == 0:
            candidates = np.flatnonzero(hops >= 1)
            if candidates.size == 0:
                continue
        dest = int(candidates[rng.integers(candidates.size)])
        path = biased_walk(net, rng, source, dest, preference, spacing, max_steps=4 * int(hops[dest]))
        if path is None:
            continue
        depart = base_time + float(rng.integers(7 * 86400))
        steps = [(path[0], depart)]
        for a, b in zip(path, path[1:]):
            depart += euclid(net, a, b) / WALK_SPEED_MPS
            steps.append((b, depart))
        return Trajectory(user=-1, steps=tuple(steps))
    raise DataError("destination unreachable after 100 walk resamples")


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write trajectories as JSON Lines in canonical order."""
    with open(path, "w", encoding="utf-8") as f:
        for t in sorted(dataset.trajectories, key=_canonical_key):
            doc = {"user": t.user, "steps": [[loc, ts] for loc, ts in t.steps]}
            if t.split is not None:
                doc["split"] = t.split
            f.write(json.dumps(doc, separators=(",", ":")))
            f.write("\n")


def load_dataset(path: str, net: RoadNetwork) -> Dataset:
    """Load a JSONL trajectory file, validating every step against the network."""
    trajectories = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: cannot parse trajectory: {exc}") from exc
            split = doc.get("split")
            if split is not None and split not in SPLITS:
                raise DataError(f"{path}:{line_no}: unknown split label {split!r}")
            t = Trajectory(
                user=int(doc["user"]),
                steps=tuple((int(loc), float(ts)) for loc, ts in doc["steps"]),
                split=split,
            )
            try:
                validate_trajectory(t, net)
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from exc
            trajectories.append(t)
    return Dataset(trajectories)
