"""Command-line entry point: ``phgr <command> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (non-finite loss or a violated geometry property).
"""
from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .autodiff import ContractError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, build_configs, config_keys, env_overrides, read_config_file
from .data import (read_interactions, build_sequences, item_counts, load_split, split,
                   synth_hierarchical, to_records, write_interactions, write_split_manifest)
from .evaluation import (evaluate, evaluate_popularity, export_attention, format_table, metric_rows,
                         region_analysis, write_metrics_csv, write_region_csv)
from .experiments import ABLATIONS, ablation_config, item_points
from .graphs import DataError, build_global_graph
from .model import ModelConfig, forward
from .training import NumericalError, TrainConfig, fit

log = logging.getLogger("phgr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
VARIANT_ALIASES = {"phgr": "poincare", "ehgr": "euclidean"}
GRID = {"dim": (8, 16, 32, 64, 128), "layers": (1, 2, 3, 4, 5),
        "omega": (1e-4, 1e-3, 1e-2, 1e-1, 1.0), "learning_rate": (1e-4, 1e-3)}
_BOOL_KEYS = ("no_global", "no_local", "no_long", "no_short", "edge_weights")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(s: str) -> tuple:
    try:
        return tuple(int(x) for x in s.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _float_list(s: str) -> tuple:
    try:
        return tuple(float(x) for x in s.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


# ---------------------------------------------------------------- flag groups

def _add_common(p, data_help="prepared dataset directory", out=True, seed=True):
    p.add_argument("--data", type=Path, help=data_help)
    if out:
        p.add_argument("--out", type=Path, help="output directory")
    if seed:
        p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--threads", type=int, help="cap on BLAS worker threads")


def _add_config_flags(p):
    """One flag per config key; values left as None are not applied."""
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--variant", choices=sorted(VARIANT_ALIASES), help="poincare (phgr) or euclidean (ehgr)")
    p.add_argument("--inner", choices=("D", "P"), help="scoring inner product")
    helps = {"no_global": "drop the global graph view", "no_local": "drop the local graph view",
             "no_long": "drop long-term attention", "no_short": "drop short-term attention",
             "edge_weights": "scale attention logits by edge weights"}
    for key in _BOOL_KEYS:
        p.add_argument("--" + key.replace("_", "-"), action="store_const", const=True, help=helps[key])
    skip = {"variant", "inner", "seed", *_BOOL_KEYS}
    for key, (_, default) in config_keys(ModelConfig, TrainConfig).items():
        if key in skip:
            continue
        flag = "--" + key.replace("_", "-")
        if isinstance(default, int) and not isinstance(default, bool):
            p.add_argument(flag, type=int, help=f"(default {default})")
        elif isinstance(default, float):
            p.add_argument(flag, type=float, help=f"(default {default})")
        else:
            p.add_argument(flag, type=_float_list, help="comma-separated layer weights (default uniform)")


def _add_k(p):
    p.add_argument("--k", type=_int_list, default=(10, 20), help="cutoffs, e.g. 10,20")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="phgr", description="Hyperbolic graph sequential recommender.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="parse a TSV log and write split manifests")
    _add_common(p, data_help="interaction TSV (user, item, timestamp)")
    p.add_argument("--synthetic", type=_int_list, metavar="USERS,ITEMS",
                   help="generate a synthetic log instead of reading --data")
    p.add_argument("--power-exponent", type=float, default=2.0, help="synthetic popularity exponent")
    p.add_argument("--min-len", type=int, default=3, help="drop users with fewer interactions")
    p.add_argument("--max-malformed", type=int, default=0, help="tolerated malformed lines")

    p = sub.add_parser("train", help="train one model and save a checkpoint")
    _add_common(p)
    _add_config_flags(p)
    _add_k(p)

    p = sub.add_parser("evaluate", help="ranking metrics of a checkpoint")
    _add_common(p, seed=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--dataset-name", default="dataset", help="label for the metrics table")
    _add_k(p)

    p = sub.add_parser("ablate", help="train the eight ablation variants with a shared seed")
    _add_common(p)
    _add_config_flags(p)
    _add_k(p)
    p.add_argument("--variants", help="comma-separated subset of " + ", ".join(ABLATIONS))

    p = sub.add_parser("verify-geometry", help="randomised geometry property battery")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--c", type=float, default=1.0, help="curvature magnitude")
    p.add_argument("--dims", type=_int_list, default=(2, 8, 64))
    p.add_argument("--max-norm", type=float, default=0.98, help="largest sampled sqrt(c)*norm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)

    p = sub.add_parser("analyze-regions", help="popularity by distance-to-origin band")
    _add_common(p, seed=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--boundaries", type=_float_list, help="three increasing distances (default quartiles)")

    p = sub.add_parser("export-attention", help="long/short attention weights for chosen users")
    _add_common(p, seed=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--users", help="comma-separated user ids (default: first five test users)")

    p = sub.add_parser("grid", help="validation sweep over dim, layers, omega and learning rate")
    _add_common(p)
    _add_config_flags(p)
    p.add_argument("--dims", type=_int_list, default=GRID["dim"])
    p.add_argument("--layer-grid", type=_int_list, default=GRID["layers"])
    p.add_argument("--omegas", type=_float_list, default=GRID["omega"])
    p.add_argument("--learning-rates", type=_float_list, default=GRID["learning_rate"])
    _add_k(p)
    return ap


# ---------------------------------------------------------------- helpers

def _require(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required for {args.command}")


def _configs(args):
    keys = config_keys(ModelConfig, TrainConfig)
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    env = env_overrides(keys)
    flags = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    for layer in (file_values, env, flags):
        if isinstance(layer.get("variant"), str):
            layer["variant"] = VARIANT_ALIASES.get(layer["variant"].lower(), layer["variant"])
    return build_configs(ModelConfig, TrainConfig, file_values, env, flags)


def _dataset_paths(data: Path):
    if data.is_dir():
        return data / "interactions.tsv", data
    return data, data.parent


def load_dataset(data: Path):
    tsv, manifest_dir = _dataset_paths(data)
    if not tsv.exists():
        raise DataError(f"interaction log {tsv} not found")
    return load_split(read_interactions(tsv), manifest_dir)


def _check_k(ks, n_items):
    if not ks:
        raise UsageError("--k needs at least one cutoff")
    bad = [k for k in ks if k < 1 or k > n_items]
    if bad:
        raise UsageError(f"--k {bad} outside 1..{n_items}")


def _load_model(args, ds):
    params, cfg, meta = load_checkpoint(args.checkpoint)
    if params["item_emb"].shape[0] - 1 != ds.n_items or params["user_emb"].shape[0] != ds.n_users:
        raise DataError("checkpoint does not match the dataset's user/item counts")
    return params, cfg, meta


def _write_curve(path, curve):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(curve[0]))
        w.writeheader()
        for row in curve:
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})


def _dataset_label(args):
    return Path(args.data).stem if args.data else "dataset"


# ---------------------------------------------------------------- commands

def cmd_prepare(args):
    _require(args, "out")
    seed = args.seed or 0
    if args.synthetic:
        if len(args.synthetic) != 2:
            raise UsageError("--synthetic takes USERS,ITEMS")
        seqs = synth_hierarchical(*args.synthetic, args.power_exponent, seed=seed)
        records = to_records(seqs)
    else:
        _require(args, "data")
        if not args.data.exists():
            raise DataError(f"interaction log {args.data} not found")
        records = read_interactions(args.data, args.max_malformed)
    seqs, vocab = build_sequences(records, args.min_len)
    ds = split(seqs, seed, vocab)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "interactions.tsv", "w", encoding="utf-8", newline="") as fh:
        write_interactions(records, fh)
    write_split_manifest(ds, args.out)
    print(f"users={ds.n_users} items={ds.n_items} train={len(ds.train)} valid={len(ds.valid)} "
          f"test={len(ds.test)} -> {args.out}")


def cmd_train(args):
    mc, tc = _configs(args)
    _require(args, "data", "out")
    ds = load_dataset(args.data)
    _check_k(args.k, ds.n_items)
    res = fit(ds, mc, tc, eval_k=args.k[0])
    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out / "model.ckpt", res.params, mc,
                    {"seed": tc.seed, "best_epoch": res.best_epoch, "stopped_epoch": res.stopped_epoch})
    _write_curve(args.out / "curve.csv", res.curve)
    graph = build_global_graph(ds.train, ds.n_users, ds.n_items)
    m = evaluate(res.params, graph, ds.valid, mc, args.k)
    rows = metric_rows(_dataset_label(args), "valid", m)
    write_metrics_csv(args.out / "valid_metrics.csv", rows)
    print(f"best epoch {res.best_epoch}, stopped at {res.stopped_epoch}")
    print(format_table(rows))


def cmd_evaluate(args):
    _require(args, "data")
    ds = load_dataset(args.data)
    _check_k(args.k, ds.n_items)
    params, cfg, _ = _load_model(args, ds)
    graph = build_global_graph(ds.train, ds.n_users, ds.n_items)
    seqs = getattr(ds, args.split)
    name = "PHGR" if cfg.variant == "poincare" else "EHGR"
    rows = metric_rows(args.dataset_name, name, evaluate(params, graph, seqs, cfg, args.k))
    rows += metric_rows(args.dataset_name, "popularity", evaluate_popularity(ds.train, seqs, ds.n_items, args.k))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(args.out / "metrics.csv", rows)
    print(format_table(rows))


def cmd_ablate(args):
    base, tc = _configs(args)
    _require(args, "data", "out")
    names = list(ABLATIONS) if not args.variants else [v.strip() for v in args.variants.split(",")]
    unknown = [n for n in names if n not in ABLATIONS]
    if unknown:
        raise UsageError(f"unknown variants {unknown}; choose from {', '.join(ABLATIONS)}")
    ds = load_dataset(args.data)
    _check_k(args.k, ds.n_items)
    graph = build_global_graph(ds.train, ds.n_users, ds.n_items)
    rows = []
    for name in names:
        cfg = ablation_config(base, name)
        log.info("ablation %s", name)
        res = fit(ds, cfg, tc, eval_k=args.k[0])
        rows += metric_rows(_dataset_label(args), name, evaluate(res.params, graph, ds.test, cfg, args.k))
    args.out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(args.out / "ablation.csv", rows)
    print(format_table(rows))


def cmd_verify_geometry(args):
    from .verify import geometry_battery

    if args.samples < 1 or args.c <= 0 or not 0 < args.max_norm < 1:
        raise UsageError("need --samples >= 1, --c > 0 and 0 < --max-norm < 1")
    results = geometry_battery(args.samples, args.c, args.dims, args.max_norm, args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties hold")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_analyze_regions(args):
    _require(args, "data", "out")
    ds = load_dataset(args.data)
    params, cfg, _ = _load_model(args, ds)
    rep = region_analysis(item_points(params, cfg), item_counts(ds.train, ds.n_items), args.boundaries,
                          cfg.variant, cfg.curvature)
    args.out.mkdir(parents=True, exist_ok=True)
    write_region_csv(args.out / "regions.csv", rep)
    for region, lo, hi, n, mean in rep.rows():
        print(f"region {region}  ({lo:.4f}, {hi:.4f}]  items={n:<5d} mean interactions={mean:.2f}")


def cmd_export_attention(args):
    _require(args, "data", "out")
    ds = load_dataset(args.data)
    params, cfg, _ = _load_model(args, ds)
    graph = build_global_graph(ds.train, ds.n_users, ds.n_items)
    every = {ds.vocab.users[s.user_id]: s for s in ds.train + ds.valid + ds.test}
    ids = [u.strip() for u in args.users.split(",")] if args.users else \
        [ds.vocab.users[s.user_id] for s in ds.test[:5]]
    missing = [u for u in ids if u not in every]
    if missing:
        raise DataError(f"unknown users {missing}")
    records = []
    for uid in ids:
        seq = every[uid]
        records.append((uid, [ds.vocab.items[i] for i in seq.items], forward(seq.items, graph, params, cfg)))
    args.out.mkdir(parents=True, exist_ok=True)
    export_attention(records, args.out / "attention.csv")
    print(f"wrote attention for {len(records)} sequences to {args.out / 'attention.csv'}")


def cmd_grid(args):
    base_m, base_t = _configs(args)
    _require(args, "data", "out")
    ds = load_dataset(args.data)
    _check_k(args.k, ds.n_items)
    graph = build_global_graph(ds.train, ds.n_users, ds.n_items)
    k = args.k[0]
    results = []
    for d, L, w, lr in itertools.product(args.dims, args.layer_grid, args.omegas, args.learning_rates):
        try:
            mc = replace(base_m, dim=d, layers=L, alpha=None, zeta=None)
            tc = replace(base_t, omega=w, learning_rate=lr)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        res = fit(ds, mc, tc, eval_k=k)
        h = evaluate(res.params, graph, ds.valid, mc, (k,)).hit[k]
        log.info("grid d=%d L=%d omega=%g lr=%g -> H@%d %.4f", d, L, w, lr, k, h)
        results.append((d, L, w, lr, res.best_epoch, h))
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "grid.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["dim", "layers", "omega", "learning_rate", "best_epoch", f"valid_H@{k}"])
        for r in results:
            wr.writerow([r[0], r[1], repr(r[2]), repr(r[3]), r[4], repr(r[5])])
    best = max(results, key=lambda r: r[5])
    print(f"best: dim={best[0]} layers={best[1]} omega={best[2]:g} lr={best[3]:g} valid H@{k}={100 * best[5]:.2f}")


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "evaluate": cmd_evaluate, "ablate": cmd_ablate,
            "verify-geometry": cmd_verify_geometry, "analyze-regions": cmd_analyze_regions,
            "export-attention": cmd_export_attention, "grid": cmd_grid}


def _limit_threads(n):
    if n is None:
        return None
    if n < 1:
        raise UsageError("--threads must be positive")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        limiter = _limit_threads(getattr(args, "threads", None))
        try:
            code = COMMANDS[args.command](args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
        return code or EXIT_OK
    except (UsageError, ConfigError, ContractError) as exc:
        print(f"phgr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError) as exc:
        print(f"phgr {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"phgr {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
