"""Build a synthetic road network and user trajectories, then look inside.

Walks are goal-biased and user-biased: every synthetic user draws a
preference weight for main roads, so the same origin/destination pair yields
different routes for different users. That per-user signal is what the
learned cost models pick up later.
"""

import collections
import os

from routerec import grid_network, save_network, synth_generate, split_dataset, save_dataset, bucket
from routerec.network import MAIN

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

# a 12x12 city: two main rows and one main column form the arterial grid
net = grid_network(12, 12, spacing=100.0, main_rows={3, 8}, main_cols={6})
print(f"network: {net.num_locations} locations, {net.num_edges} directed edges")
main_edges = sum(1 for cls in net.edge_class.values() if cls == MAIN)
print(f"main-road edges: {main_edges} of {net.num_edges}")

dataset = synth_generate(net, n_users=4, per_user=25, seed=42, hop_range=(9, 20))
dataset = split_dataset(dataset, seed=42)

lengths = [len(t) for t in dataset.trajectories]
print(f"\ntrajectories: {len(dataset)} "
      f"(lengths min {min(lengths)}, mean {sum(lengths)/len(lengths):.1f}, max {max(lengths)})")
print("bucket mix:", dict(collections.Counter(bucket(t) for t in dataset.trajectories)))
print("split mix:", dict(collections.Counter(t.split for t in dataset.trajectories)))

# how strongly each user leans on main roads
for user, trajs in sorted(dataset.by_user().items()):
    used = collections.Counter()
    for t in trajs:
        for a, b in zip(t.locations, t.locations[1:]):
            used[net.edge_class.get((a, b))] += 1
    share = used[MAIN] / (used[MAIN] + used["side"])
    print(f"user {user}: main-road share {share:.2f} over {len(trajs)} trajectories")

save_network(net, os.path.join(OUT, "network.json"))
save_dataset(dataset, os.path.join(OUT, "trajectories.jsonl"))
print(f"\nwrote {OUT}/network.json and {OUT}/trajectories.jsonl")
