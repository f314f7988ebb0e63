"""Experiment runner: ``sse-rec {gen,train,sweep,eval,pca,radsim}``.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines (keys
are long flag names, dashes or underscores); explicit flags win over the
file. The effective configuration is written next to the outputs as
``config.txt``.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from sse_rec.dataset import IdMap, export_tsv, gen_synthetic, load_tsv, split_holdout
from sse_rec.embedding import ModelParams, export_embeddings_csv, load_embeddings_csv
from sse_rec.evaluation import evaluate, export_pca_csv
from sse_rec.graph import TransitionModel, load_edgelist, save_edgelist
from sse_rec.models import BPR, MF, TrainConfig, train
from sse_rec.theory import RadSimConfig, rademacher_sweep, write_radsim_csv

log = logging.getLogger("sse_rec")

MODES = ("none", "sse-se", "sse-graph", "glr", "dropout")


class ConfigError(Exception):
    """Bad flags or config; exits with status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def read_config_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _parse_with_config(parser: argparse.ArgumentParser, argv):
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        file_values = read_config_file(known.config)
        dests = {a.dest: a for a in parser._actions}
        defaults = {}
        for key, raw in file_values.items():
            if key not in dests:
                raise ConfigError(f"unknown config key {key!r}")
            act = dests[key]
            act.required = False
            if isinstance(act, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = act.type(raw) if act.type else raw
        parser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _write_effective_config(args, out_dir: Path) -> None:
    with open(out_dir / "config.txt", "w", encoding="utf-8") as fh:
        for key, value in sorted(vars(args).items()):
            if key in ("func", "config"):
                continue
            fh.write(f"{key} = {value}\n")


def _floats(text: str):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str):
    return [int(x) for x in text.split(",") if x.strip()]


def _modes(text: str):
    modes = {m.strip() for m in text.split("+") if m.strip()}
    bad = modes - set(MODES)
    if bad or not modes:
        raise ConfigError(f"unknown mode(s) {sorted(bad)}; choose from {', '.join(MODES)} joined by '+'")
    if "none" in modes and len(modes) > 1:
        raise ConfigError("mode 'none' cannot be combined")
    return modes


def _add_train_flags(p):
    p.add_argument("--config")
    p.add_argument("--data", required=True, help="training TSV (or all data with --test-fraction)")
    p.add_argument("--test", help="held-out TSV; otherwise --data is split")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--graph", help="item edge list (raw ids) for sse-graph / glr")
    p.add_argument("--user-graph", help="user edge list (raw ids)")
    p.add_argument("--model", choices=(MF, BPR), default=MF)
    p.add_argument("--mode", default="none", help="'+'-joined subset of: " + ", ".join(MODES))
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--init-scale", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--p0", type=float, default=0.01, help="SSE probability for both tables")
    p.add_argument("--p-user", type=float, help="user-table SSE probability (overrides --p0)")
    p.add_argument("--p-item", type=float, help="item-table SSE probability (overrides --p0)")
    p.add_argument("--rho-item", type=float, default=10.0)
    p.add_argument("--rho-user", type=float, default=10.0)
    p.add_argument("--dropout", type=float, default=0.1, help="used when mode includes dropout")
    p.add_argument("--glr-beta", type=float, default=0.05)
    p.add_argument("--minibatch", type=int, default=1)
    p.add_argument("--negatives", type=int, default=1)
    p.add_argument("--k", type=int, default=10, help="P@k cutoff for bpr")
    p.add_argument("--no-clip", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def _load_split(args):
    if not Path(args.data).exists():
        raise ConfigError(f"--data {args.data} does not exist")
    if args.test:
        if not Path(args.test).exists():
            raise ConfigError(f"--test {args.test} does not exist")
        # joint id space: read both files through one loader pass
        train_ds, maps = load_tsv(args.data)
        test_raw, test_maps = load_tsv(args.test)
        return _align(train_ds, maps, test_raw, test_maps)
    ds, maps = load_tsv(args.data)
    return split_holdout(ds, args.test_fraction, args.split_seed), maps


def _align(train_ds, maps, test_ds, test_maps):
    from sse_rec.dataset import InteractionDataset, Split

    umap, imap = maps["user"], maps["item"]
    users = np.array([umap.add(test_maps["user"].index_to_raw[u]) for u in test_ds.users], dtype=np.int64)
    items = np.array([imap.add(test_maps["item"].index_to_raw[i]) for i in test_ds.items], dtype=np.int64)
    lo = min(train_ds.rating_min, test_ds.rating_min)
    hi = max(train_ds.rating_max, test_ds.rating_max)
    nu, ni = len(umap), len(imap)
    tr = InteractionDataset(train_ds.users, train_ds.items, train_ds.ratings, nu, ni,
                            train_ds.timestamps, lo, hi)
    te = InteractionDataset(users, items, test_ds.ratings, nu, ni, None, lo, hi)
    return Split(tr, te), maps


def _build_config(args, split, maps, seed):
    modes = _modes(args.mode)
    nu, ni = split.train.num_users, split.train.num_items
    p_user = args.p0 if args.p_user is None else args.p_user
    p_item = args.p0 if args.p_item is None else args.p_item
    if ("sse-graph" in modes or "glr" in modes) and not args.graph:
        raise ConfigError(f"mode {args.mode!r} requires --graph")
    for path in (args.graph, args.user_graph):
        if path and not Path(path).exists():
            raise ConfigError(f"graph file {path} does not exist")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        item_graph = load_edgelist(args.graph, maps["item"]) if args.graph else None
        user_graph = load_edgelist(args.user_graph, maps["user"]) if args.user_graph else None
    for w in caught:
        log.warning("%s", w.message)
    try:
        return _make_config(args, modes, nu, ni, p_user, p_item, item_graph, user_graph, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _make_config(args, modes, nu, ni, p_user, p_item, item_graph, user_graph, seed):
    sse_user = sse_item = None
    if "sse-se" in modes:
        sse_user = TransitionModel.uniform(nu, p_user)
        sse_item = TransitionModel.uniform(ni, p_item)
    if "sse-graph" in modes:
        sse_item = TransitionModel.from_graph(item_graph, p_item, args.rho_item)
        if user_graph is not None:
            sse_user = TransitionModel.from_graph(user_graph, p_user, args.rho_user)
        elif sse_user is None:
            sse_user = TransitionModel.uniform(nu, p_user)
    glr = "glr" in modes
    return TrainConfig(
        lr=args.lr,
        weight_decay=args.weight_decay,
        dropout=args.dropout if "dropout" in modes else 0.0,
        sse_user=sse_user,
        sse_item=sse_item,
        glr_beta=args.glr_beta if glr else 0.0,
        glr_item_graph=item_graph if glr else None,
        glr_user_graph=user_graph if glr else None,
        epochs=args.epochs,
        minibatch=args.minibatch,
        negatives_per_positive=args.negatives,
        seed=seed,
        metric_k=args.k,
        clip=not args.no_clip,
    )


def _train_once(args, split, maps, seed):
    cfg = _build_config(args, split, maps, seed)
    params = ModelParams.init(split.train.num_users, split.train.num_items, args.dim, args.init_scale, seed)
    return train(args.model, split, cfg, params)


def run_train(args) -> int:
    split, maps = _load_split(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params, report = _train_once(args, split, maps, args.seed)
    report.to_csv(out / "report.csv", include_time=False)
    with open(out / "timing.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "seconds"])
        w.writerows([r.epoch, f"{r.seconds:.6f}"] for r in report.records)
    export_embeddings_csv(params, out / "embeddings.csv")
    maps["user"].save_csv(out / "user_ids.csv")
    maps["item"].save_csv(out / "item_ids.csv")
    _write_effective_config(args, out)
    last = report.records[-1]
    print(f"final epoch={last.epoch} train_loss={last.train_loss:.6f} {report.metric_name}={last.metric:.6f}")
    return 0


_GRID_KEYS = {
    "mode": str,
    "p0": float,
    "p_user": float,
    "p_item": float,
    "rho_item": float,
    "weight_decay": float,
    "dropout": float,
    "glr_beta": float,
    "lr": float,
    "dim": int,
}


def _parse_grid(items):
    grid = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"grid entry {item!r} must look like key=v1,v2")
        key, values = item.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in _GRID_KEYS:
            raise ConfigError(f"cannot sweep {key!r}; choose from {', '.join(_GRID_KEYS)}")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"grid entry {item!r} has no values")
        grid[key] = [_GRID_KEYS[key](v) for v in vals]
    if not grid:
        raise ConfigError("empty grid: pass at least one --grid key=values")
    return grid


def _sweep_cell(args, split, maps, overrides, seed):
    cell = argparse.Namespace(**vars(args))
    for k, v in overrides.items():
        setattr(cell, k, v)
    _, report = _train_once(cell, split, maps, seed)
    return report.metric_name, report.records[-1].metric


def run_sweep(args) -> int:
    grid = _parse_grid(args.grid)
    seeds = _ints(args.seeds)
    if not seeds:
        raise ConfigError("--seeds is empty")
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    split, maps = _load_split(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = sorted(grid)
    combos = list(itertools.product(*(grid[k] for k in keys)))
    jobs = [(dict(zip(keys, combo)), seed) for combo in combos for seed in seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            futures = [pool.submit(_sweep_cell, args, split, maps, o, s) for o, s in jobs]
            results = [f.result() for f in futures]
    else:
        results = [_sweep_cell(args, split, maps, o, s) for o, s in jobs]
    metric_name = results[0][0]
    detail, summary = [], []
    for c, combo in enumerate(combos):
        finals = [results[c * len(seeds) + i][1] for i in range(len(seeds))]
        detail.extend(["detail", *combo, seed, repr(m), ""] for seed, m in zip(seeds, finals))
        arr = np.array(finals)
        sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        summary.append(["aggregate", *combo, "", repr(float(arr.mean())), repr(sd)])
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", *keys, "seed", metric_name, "std"])
        w.writerows(detail + summary)
    _write_effective_config(args, out)
    for row in summary:
        print(",".join(str(x) for x in row))
    return 0


def run_eval(args) -> int:
    run = Path(args.run)
    for name in ("embeddings.csv", "user_ids.csv", "item_ids.csv"):
        if not (run / name).exists():
            raise ConfigError(f"{run} has no {name}; point --run at a train output directory")
    params = load_embeddings_csv(run / "embeddings.csv")
    maps = {"user": IdMap.load_csv(run / "user_ids.csv"), "item": IdMap.load_csv(run / "item_ids.csv")}
    if args.train and args.test:
        split, _ = _remap_to(maps, args.train, args.test)
    elif args.data:
        split, _ = _remap_to(maps, args.data, None, args.test_fraction, args.split_seed)
    else:
        raise ConfigError("eval needs --data, or both --train and --test")
    report = evaluate(params, split.train, split.test, ks=_ints(args.ks), clip=not args.no_clip, kind=args.model)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name, value in report.as_rows():
            w.writerow([name, repr(float(value))])
            print(f"{name}={value:.6f}")
    return 0


def _remap_to(maps, train_path, test_path, test_fraction=0.2, split_seed=0):
    """Load TSVs into an existing id space; unknown ids are an error."""
    from sse_rec.dataset import InteractionDataset, Split

    def load(path):
        ds, m = load_tsv(path)
        try:
            u = np.array([maps["user"].raw_to_index[m["user"].index_to_raw[x]] for x in ds.users])
            i = np.array([maps["item"].raw_to_index[m["item"].index_to_raw[x]] for x in ds.items])
        except KeyError as exc:
            raise ConfigError(f"{path}: id {exc} not present in the trained model") from None
        return InteractionDataset(u, i, ds.ratings, len(maps["user"]), len(maps["item"]),
                                  ds.timestamps, ds.rating_min, ds.rating_max)

    if test_path is None:
        return split_holdout(load(train_path), test_fraction, split_seed), maps
    tr, te = load(train_path), load(test_path)
    lo, hi = min(tr.rating_min, te.rating_min), max(tr.rating_max, te.rating_max)
    rebase = lambda d: InteractionDataset(d.users, d.items, d.ratings, d.num_users, d.num_items,  # noqa: E731
                                          d.timestamps, lo, hi)
    return Split(rebase(tr), rebase(te)), maps


def run_pca(args) -> int:
    params = load_embeddings_csv(args.embeddings)
    tables = ("user", "item") if args.table == "both" else (args.table,)
    if args.out_dim > params.dim:
        raise ConfigError(f"--out-dim {args.out_dim} exceeds embedding dim {params.dim}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_pca_csv(params, out, args.out_dim, tables)
    return 0


def run_radsim(args) -> int:
    run = Path(args.run)
    params = load_embeddings_csv(run / "embeddings.csv")
    maps = {"user": IdMap.load_csv(run / "user_ids.csv"), "item": IdMap.load_csv(run / "item_ids.csv")}
    if args.all_rows:
        ds = _remap_to(maps, args.data, args.data)[0].train
    else:
        ds = _remap_to(maps, args.data, None, args.test_fraction, args.split_seed)[0].train
    graph = None
    if args.graph:
        graph = load_edgelist(args.graph, maps["item"])
    try:
        cfg = RadSimConfig(num_outer_samples=args.samples, mc_inner=args.mc_inner, p0_grid=_floats(args.p0_grid),
                           seed=args.seed, inner=args.inner, mode=args.loss_mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    results = rademacher_sweep(params, ds, cfg, item_graph=graph, rho=args.rho_item)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_radsim_csv(results, out)
    for p0, vals in results.items():
        print(f"p0={p0} median_abs={np.median(np.abs(vals)):.6f}")
    return 0


def run_gen(args) -> int:
    ds, graph = gen_synthetic(args.users, args.items, args.dim_true, args.clusters, args.ratings_per_user,
                              args.noise, args.seed, item_scale=args.item_scale, cluster_scale=args.cluster_scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    maps = {"user": IdMap.identity(ds.num_users), "item": IdMap.identity(ds.num_items)}
    export_tsv(ds, maps, out / "ratings.tsv")
    save_edgelist(graph, out / "item_graph.tsv", maps["item"])
    _write_effective_config(args, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sse-rec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic clustered rating set and its item graph")
    g.add_argument("--config")
    g.add_argument("--users", type=int, default=1000)
    g.add_argument("--items", type=int, default=500)
    g.add_argument("--dim-true", type=int, default=4)
    g.add_argument("--clusters", type=int, default=2)
    g.add_argument("--ratings-per-user", type=int, default=30)
    g.add_argument("--noise", type=float, default=0.5)
    g.add_argument("--item-scale", type=float, default=0.1)
    g.add_argument("--cluster-scale", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=run_gen)

    t = sub.add_parser("train", help="train MF/BPR with any regularizer combination")
    _add_train_flags(t)
    t.set_defaults(func=run_train)

    s = sub.add_parser("sweep", help="grid over hyperparameters and seeds")
    _add_train_flags(s)
    s.add_argument("--grid", action="append", help="key=v1,v2 (repeatable)")
    s.add_argument("--seeds", default="0,1,2")
    s.add_argument("--workers", type=int, default=1, help="processes for independent (config, seed) cells")
    s.set_defaults(func=run_sweep)

    e = sub.add_parser("eval", help="score a trained run on held-out data")
    e.add_argument("--config")
    e.add_argument("--run", required=True, help="train output directory")
    e.add_argument("--data", help="TSV to split like train did")
    e.add_argument("--train")
    e.add_argument("--test")
    e.add_argument("--test-fraction", type=float, default=0.2)
    e.add_argument("--split-seed", type=int, default=0)
    e.add_argument("--model", choices=(MF, BPR), default=MF)
    e.add_argument("--ks", default="1,5,10")
    e.add_argument("--no-clip", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=run_eval)

    pc = sub.add_parser("pca", help="PCA projection of exported embeddings")
    pc.add_argument("--config")
    pc.add_argument("--embeddings", required=True)
    pc.add_argument("--table", choices=("user", "item", "both"), default="item")
    pc.add_argument("--out-dim", type=int, default=3)
    pc.add_argument("--out", required=True)
    pc.set_defaults(func=run_pca)

    r = sub.add_parser("radsim", help="SSE-smoothed Rademacher samples over a p0 grid")
    r.add_argument("--config")
    r.add_argument("--run", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--test-fraction", type=float, default=0.2)
    r.add_argument("--split-seed", type=int, default=0)
    r.add_argument("--all-rows", action="store_true", help="use every row of --data, not the train split")
    r.add_argument("--graph")
    r.add_argument("--rho-item", type=float, default=10.0)
    r.add_argument("--p0-grid", default="0,0.2,0.4,0.6,0.8")
    r.add_argument("--samples", type=int, default=2000)
    r.add_argument("--mc-inner", type=int, default=64)
    r.add_argument("--inner", choices=("exact", "mc"), default="exact")
    r.add_argument("--loss-mode", choices=("observed", "label"), default="observed")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=run_radsim)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        verbose = False
        while argv and argv[0] in ("-v", "--verbose"):
            verbose = True
            argv.pop(0)
        if not argv or argv[0] in ("-h", "--help"):
            parser.parse_args(argv or ["--help"])
        choices = parser._subparsers._group_actions[0].choices
        if argv[0] not in choices:
            raise ConfigError(f"unknown command {argv[0]!r}; choose from {', '.join(choices)}")
        args = _parse_with_config(choices[argv[0]], argv[1:])
        args.command = argv[0]
        logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(levelname)s %(message)s")
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report, exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
