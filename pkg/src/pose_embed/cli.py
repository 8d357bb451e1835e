"""Command-line entry point: ``pose-embed <subcommand> [--config FILE] [--set KEY=VALUE ...]``.

Every stage re-derives the dataset and its split from the config, so stages
can be run separately without passing split files around.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import build_config
from .data import generate_synthetic, write_annotations
from .mining import TripletStream, write_triplets
from .model import load_checkpoint, save_checkpoint
from .pipeline import evaluate_methods, prepare_splits, run_pipeline, validate_manifest
from .retrieval import (
    EmbeddingTable,
    all_metrics,
    embed_all,
    rank_all,
    read_ranklists,
    write_metrics_csv,
    write_ranklists,
)
from .train import train, write_loss_csv


def _parse_sets(pairs):
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args):
    overrides = _parse_sets(args.set)
    if args.out:
        overrides["output_dir"] = args.out
    if getattr(args, "annotations", None):
        overrides["annotations"] = args.annotations
    return build_config(args.config, overrides, args.seed)


def cmd_synth(args):
    cfg = _config(args)
    n = cfg.n_synthetic if args.n is None else args.n
    ds = generate_synthetic(n, cfg.seeds["synthetic"], cfg.synthetic_spec())
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_annotations(ds, path)
    print(f"wrote {len(ds)} poses to {path}")


def cmd_mine(args):
    cfg = _config(args)
    stream = TripletStream(prepare_splits(cfg), cfg.triplet_spec(), cache=not args.no_cache)
    if args.dump:
        n = write_triplets(stream, args.dump)
        print(f"wrote {n} triplets to {args.dump}")
    else:
        print(stream.count())


def cmd_train(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stream = TripletStream(prepare_splits(cfg), cfg.triplet_spec())
    model, losses = train(stream, cfg.train_config(), cfg.canvas(), cfg.augmentation(), log_every=50)
    save_checkpoint(model, out / "model.ckpt")
    write_loss_csv(losses, out / "loss.csv")
    print(f"final loss {losses[-1] if len(losses) else float('nan'):.5f}; wrote {out / 'model.ckpt'}")


def cmd_embed(args):
    cfg = _config(args)
    model = load_checkpoint(args.model)
    split = prepare_splits(cfg).split(args.split)
    table = embed_all(model, split, cfg.canvas())
    table.save(args.output)
    print(f"embedded {len(table)} {args.split} poses to {args.output}")


def cmd_retrieve(args):
    queries = EmbeddingTable.load(args.queries)
    database = EmbeddingTable.load(args.database)
    lists = rank_all(queries, database, args.k)
    Path(args.output).unlink(missing_ok=True)
    write_ranklists(lists, args.output, args.method)
    print(f"wrote {len(lists)} rank lists to {args.output}")


def cmd_eval(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = prepare_splits(cfg)
    queries, database = dataset.split("query"), dataset.split("database")
    results = []
    if args.model:
        results, _ = evaluate_methods(cfg, load_checkpoint(args.model), dataset)
    if args.ranklists:
        lists = read_ranklists(args.ranklists)
        for curve in all_metrics(lists, queries, database, cfg.ks, cfg.hit_threshold, cfg.relative_slack):
            results.append((args.method, curve))
    if not results:
        raise SystemExit("eval needs --model and/or --ranklists")
    write_metrics_csv(results, out / "metrics.csv")
    for method, curve in results:
        print(method, curve.kind, " ".join(f"@{k}={v:.4f}" for k, v in zip(curve.ks, curve.values)))


def cmd_run(args):
    cfg = _config(args)
    report = run_pipeline(cfg)
    validate_manifest(report.output_dir / "manifest.json")
    for method, curve in report.metrics:
        print(method, curve.kind, " ".join(f"@{k}={v:.4f}" for k, v in zip(curve.ks, curve.values)))
    print(f"outputs in {report.output_dir}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file or a previous manifest.json")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, help="master seed (overrides POSE_TRIPLET_SEED)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--annotations", help="JSON-lines annotation file (default: synthetic poses)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pose-embed", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write synthetic poses as JSON lines")
    s.add_argument("--n", type=int)
    s.add_argument("--output", "-o", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mine", parents=[common], help="count or dump mined triplets")
    s.add_argument("--dump", help="write anchor,positive,negative lines here")
    s.add_argument("--no-cache", action="store_true", help="do not keep per-anchor sets in memory")
    s.set_defaults(func=cmd_mine)

    s = sub.add_parser("train", parents=[common], help="train an embedding model")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("embed", parents=[common], help="embed one split with a checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--split", choices=("train", "database", "query"), default="query")
    s.add_argument("--output", "-o", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("retrieve", parents=[common], help="rank a database table for each query")
    s.add_argument("--queries", required=True)
    s.add_argument("--database", required=True)
    s.add_argument("--k", type=int, default=50)
    s.add_argument("--method", default="learned")
    s.add_argument("--output", "-o", required=True)
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("eval", parents=[common], help="metric curves for a model and/or rank lists")
    s.add_argument("--model")
    s.add_argument("--ranklists")
    s.add_argument("--method", default="ranklists")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("run", parents=[common], help="full pipeline")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)


if __name__ == "__main__":
    sys.exit(main())
