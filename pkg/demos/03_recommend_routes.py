"""Answer route queries with the trained model and inspect the search.

Run 01 and 02 first. The same query is answered for two different users:
their learned preferences steer the recommended route, and the estimated
remaining cost shrinks along the way (the f-trace).
"""

import os

from routerec import HistoryBank, Query, SearchConfig, load_checkpoint, load_dataset, load_network, recommend
from routerec.search import write_route_geojson
from routerec.value_net import build_edge_index, node_representations, write_association_csv
from routerec.prefix_cost import QueryContext, initial_state

OUT = os.path.join(os.path.dirname(__file__), "out")
net = load_network(os.path.join(OUT, "network.json"))
dataset = load_dataset(os.path.join(OUT, "trajectories.jsonl"), net)
model, extras = load_checkpoint(os.path.join(OUT, "model.json"))

bank = HistoryBank(model.cfg.history_cap)
bank.refresh(model, net, dataset)

source, dest = 0, 141  # opposite corners of the 12x12 grid
for user in (0, 1):
    q = Query(source=source, destination=dest, depart=1_564_983_000.0, user=user)
    record = recommend(model, net, q, bank, SearchConfig(max_expansions=4000))
    d = record.diagnostics
    print(f"user {user}: {len(record.route)} locations, "
          f"f={d.returned_f:.2f}, expansions={d.expansions}, "
          f"peak frontier={d.peak_frontier}")
    print("  route:", " ".join(map(str, record.route)))
    print("  f-trace:", " ".join(f"{f:.1f}" for f in record.f_trace))
    write_route_geojson(os.path.join(OUT, f"route_user{user}.geojson"), record, net)

# the association scores behind the route choice, as a plottable CSV
q = Query(source=source, destination=dest, depart=1_564_983_000.0, user=0)
qc = QueryContext(model.frozen_params(), model.cfg, q, bank)
state = initial_state(qc)
ei = build_edge_index(net, model.cfg)
reprs = node_representations(model.frozen_params(), model.cfg, ei, state.h_state)
write_association_csv(os.path.join(OUT, "association.csv"), net, reprs, source, dest)
print(f"\nwrote route GeoJSON files and association.csv to {OUT}")
