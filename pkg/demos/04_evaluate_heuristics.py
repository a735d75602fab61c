"""Compare heuristic modes on held-out queries.

Run 01 and 02 first. The same trained checkpoint answers every test query
under different remaining-cost estimators: the learned value model, its
context-free variant, embedding dot products, plain straight-line distance,
and no heuristic at all. Failures count as zero-overlap results.
"""

import os

from routerec import HistoryBank, SearchConfig, evaluate, load_checkpoint, load_dataset, load_network

OUT = os.path.join(os.path.dirname(__file__), "out")
net = load_network(os.path.join(OUT, "network.json"))
dataset = load_dataset(os.path.join(OUT, "trajectories.jsonl"), net)
model, extras = load_checkpoint(os.path.join(OUT, "model.json"))

bank = HistoryBank(model.cfg.history_cap)
bank.refresh(model, net, dataset)

print(f"{'mode':>10}  {'F1':>6}  {'prec':>6}  {'rec':>6}  {'edt':>6}  failed")
for mode in ("value-net", "o-GAT", "SP", "ED", "zero"):
    cfg = SearchConfig(heuristic_mode=mode, max_expansions=1500,
                       ed_lambda=extras.get("ed_lambda"))
    report = evaluate(model, net, dataset, cfg, bank=bank, split="test")
    failed = sum(b.n_failed for b in report.buckets)
    print(f"{mode:>10}  {report.mean_f1:6.3f}  {report.mean_precision:6.3f}  "
          f"{report.mean_recall:6.3f}  {report.mean_edt:6.2f}  {failed}")

print("\nper-bucket results for the learned heuristic:")
report = evaluate(model, net, dataset,
                  SearchConfig(max_expansions=1500), bank=bank, split="test")
for b in report.buckets:
    print(f"  {b.bucket}: n={b.n_queries} failed={b.n_failed} "
          f"P={b.precision:.3f} R={b.recall:.3f} F1={b.f1:.3f} EDT={b.edt:.2f}")
