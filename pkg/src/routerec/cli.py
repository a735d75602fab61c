"""Command-line entry point: gen-data, train, recommend, evaluate, grad-check.

Every command is deterministic given its flags and seed.  Exit codes:
0 success, 2 validation error, 3 search failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields

from . import autodiff as ad
from . import gradcheck
from .data import DataError, Dataset, Query, load_dataset, save_dataset, split_dataset, synth_generate
from .embeddings import ModelConfig
from .metrics import evaluate, write_report_csv
from .model import load_checkpoint, save_checkpoint
from .network import NetworkError, grid_network, load_network, save_network
from .prefix_cost import HistoryBank
from .search import (
    SearchBudgetError,
    SearchConfig,
    UnreachableError,
    recommend,
    write_route_geojson,
)
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SEARCH = 3
EXIT_NUMERIC = 4

NETWORK_FILE = "network.json"
TRAJECTORY_FILE = "trajectories.jsonl"


class ConfigError(ValueError):
    pass


def _build_section(cls, doc: dict, section: str):
    valid = {f.name for f in fields(cls)}
    given = doc.get(section, {})
    unknown = set(given) - valid
    if unknown:
        raise ConfigError(
            f"unknown {section} config key(s) {sorted(unknown)}; valid keys: {sorted(valid)}")
    return cls(**given)


def load_config(path: str | None) -> tuple[ModelConfig, TrainConfig, SearchConfig]:
    doc = {}
    if path:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        unknown = set(doc) - {"model", "train", "search"}
        if unknown:
            raise ConfigError(f"unknown config section(s) {sorted(unknown)}; "
                              "valid sections: ['model', 'search', 'train']")
    return (_build_section(ModelConfig, doc, "model"),
            _build_section(TrainConfig, doc, "train"),
            _build_section(SearchConfig, doc, "search"))


def _load_data_dir(path: str):
    net = load_network(os.path.join(path, NETWORK_FILE))
    dataset = load_dataset(os.path.join(path, TRAJECTORY_FILE), net)
    return net, dataset


def _parse_grid(spec: str) -> tuple[int, int]:
    try:
        w, h = spec.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise ConfigError(f"--grid must look like 20x20 (got {spec!r})") from exc


def _parse_int_set(spec: str | None) -> set[int]:
    if not spec:
        return set()
    return {int(tok) for tok in spec.split(",") if tok.strip()}


def cmd_gen_data(args) -> int:
    w, h = _parse_grid(args.grid)
    net = grid_network(w, h, args.spacing,
                       main_rows=_parse_int_set(args.main_rows),
                       main_cols=_parse_int_set(args.main_cols))
    try:
        lo, hi = (int(tok) for tok in args.hops.split(","))
    except ValueError as exc:
        raise ConfigError(f"--hops must look like 9,30 (got {args.hops!r})") from exc
    dataset = synth_generate(net, args.users, args.per_user, seed=args.seed,
                             hop_range=(lo, hi))
    dataset = split_dataset(dataset, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    save_network(net, os.path.join(args.out, NETWORK_FILE))
    save_dataset(dataset, os.path.join(args.out, TRAJECTORY_FILE))
    print(f"wrote {net.num_locations} locations, {net.num_edges} edges, "
          f"{len(dataset)} trajectories to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    model_cfg, tcfg, _ = load_config(args.config)
    if args.seed is not None:
        tcfg.seed = args.seed
    net, dataset = _load_data_dir(args.data)
    model, extras, log_rows = train(net, dataset, model_cfg, tcfg)
    extras["train_config"] = asdict(tcfg)
    save_checkpoint(model, args.out, extras=extras)
    log_path = args.log or args.out + ".log.csv"
    with open(log_path, "w", encoding="utf-8") as f:
        f.write("epoch,loss1,loss2,val_precision,val_recall,val_f1,val_edt\n")
        for r in log_rows:
            cells = [str(r["epoch"])] + [
                "" if r[k] is None else f"{r[k]:.6f}"
                for k in ("loss1", "loss2", "val_precision", "val_recall", "val_f1", "val_edt")]
            f.write(",".join(cells) + "\n")
    print(f"trained {len(log_rows)} epochs; checkpoint {args.out}; log {log_path}")
    return EXIT_OK


def _parse_query(spec: str) -> Query:
    try:
        src, dst, depart, user = spec.split(",")
        return Query(source=int(src), destination=int(dst),
                     depart=float(depart), user=int(user))
    except ValueError:
        raise  # Query raises DataError; int/float raise ValueError


def _search_config(args, extras: dict) -> SearchConfig:
    return SearchConfig(
        heuristic_mode=args.mode,
        max_expansions=args.max_expansions,
        ed_lambda=extras.get("ed_lambda"),
    )


def cmd_recommend(args) -> int:
    model, extras = load_checkpoint(args.ckpt)
    net, dataset = _load_data_dir(args.data)
    q = _parse_query(args.query)
    bank = HistoryBank(model.cfg.history_cap)
    bank.refresh(model, net, dataset)
    record = recommend(model, net, q, bank, _search_config(args, extras))
    if args.out:
        write_route_geojson(args.out, record, net)
    d = record.diagnostics
    print(f"route ({len(record.route)} locations): {' '.join(map(str, record.route))}")
    print(f"f={d.returned_f:.4f} g={d.returned_g:.4f} expansions={d.expansions} "
          f"pushes={d.pushes} peak_frontier={d.peak_frontier}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, extras = load_checkpoint(args.ckpt)
    net, dataset = _load_data_dir(args.data)
    report = evaluate(model, net, dataset, _search_config(args, extras), split=args.split)
    write_report_csv(report, args.out)
    for b in report.buckets:
        print(f"{b.bucket}: n={b.n_queries} failed={b.n_failed} "
              f"P={b.precision:.3f} R={b.recall:.3f} F1={b.f1:.3f} EDT={b.edt:.2f}")
    if not report.buckets:
        print("no eligible queries in split")
    print(f"report written to {args.out}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    ok, results = gradcheck.run(seed=args.seed, seeds=args.rounds)
    for name in sorted(results):
        print(f"{name}: max relative error {results[name]:.3e}")
    print("gradient check:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="routerec",
                                     description="Learned-cost route recommendation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic network and trajectories")
    p.add_argument("--grid", required=True, help="lattice size, e.g. 20x20")
    p.add_argument("--spacing", type=float, default=100.0, help="lattice spacing in meters")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--per-user", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--main-rows", default="", help="comma-separated main-road row indices")
    p.add_argument("--main-cols", default="", help="comma-separated main-road column indices")
    p.add_argument("--hops", default="9,30",
                   help="min,max shortest-path hops between source and destination")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the cost models")
    p.add_argument("--data", required=True, help="directory from gen-data")
    p.add_argument("--config", help="JSON config with model/train/search sections")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log CSV (default: <ckpt>.log.csv)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("recommend", help="answer one route query")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--query", required=True, help="src,dst,depart,user")
    p.add_argument("--mode", default="value-net",
                   choices=["value-net", "o-GAT", "SP", "ED", "zero"])
    p.add_argument("--max-expansions", type=int, default=10_000)
    p.add_argument("--out", help="route GeoJSON path")
    p.set_defaults(fn=cmd_recommend)

    p = sub.add_parser("evaluate", help="bucketed evaluation on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", default="value-net",
                   choices=["value-net", "o-GAT", "SP", "ED", "zero"])
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--max-expansions", type=int, default=10_000)
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounds", type=int, default=10, help="random seeds per primitive")
    p.set_defaults(fn=cmd_grad_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (SearchBudgetError, UnreachableError) as exc:
        print(f"search failed: {exc}", file=sys.stderr)
        return EXIT_SEARCH
    except ad.NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, NetworkError, ValueError, OSError,
            json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
