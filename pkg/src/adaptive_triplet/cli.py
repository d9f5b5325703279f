"""Command-line pipeline: generate data, build quadruplets, train, evaluate, compare.

Exit codes: 0 success, 1 I/O failure, 2 invalid flags or input files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from adaptive_triplet import data_io
from adaptive_triplet.embed_net import init_net
from adaptive_triplet.errors import InvalidConfigError, InvalidInputError, NumericFailureError, ParseError
from adaptive_triplet.evaluation import (
    eval_pairwise,
    eval_reference,
    eval_regression,
    format_table,
    hardness_counts,
)
from adaptive_triplet.experiments import DEFAULT_PAIRS_PER_ANCHOR, run_comparison
from adaptive_triplet.losses import MarginMode
from adaptive_triplet.sampling import (
    FeatureDataset,
    generate_quadruplets_pairwise,
    generate_quadruplets_single,
    margin_histogram,
)
from adaptive_triplet.training import TrainConfig, train

log = logging.getLogger("adaptive_triplet")


class UsageError(Exception):
    """Bad flag combination; reported with exit code 2."""


def _json(doc) -> str:
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def _load_items(args, need_mos=True):
    if need_mos:
        return data_io.load_feature_dataset(args.dataset, args.scale_n)
    ids, feats, mos, _ = data_io._load_item_columns(args.dataset)
    return data_io.ItemTable(ids, feats, mos)


def cmd_gen_data(args):
    spec = data_io.load_synthetic_spec(args.config) if args.config else data_io.SyntheticSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.pairs_out:
        if args.refs is None or args.evals_per_ref is None:
            raise UsageError("--pairs-out needs --refs and --evals-per-ref")
        ds = data_io.generate_synthetic_pairwise(spec, args.refs, args.evals_per_ref)
        data_io.save_pair_dataset(ds, args.out, args.pairs_out)
        print(f"wrote {len(ds)} items to {args.out} and {len(ds.pairs)} pairs to {args.pairs_out}")
    else:
        ds = data_io.generate_synthetic(spec)
        data_io.save_feature_dataset(ds, args.out)
        print(f"wrote {len(ds)} items to {args.out}")


def cmd_split(args):
    if args.pairs:
        ds = data_io.load_pair_dataset(args.dataset, args.pairs, args.scale_n)
        train_pairs, test_pairs = data_io.split_pairs_by_reference(ds, args.test_frac, args.seed)
        data_io.atomic_write(args.out_train, data_io.dumps_pairs(train_pairs))
        data_io.atomic_write(args.out_test, data_io.dumps_pairs(test_pairs))
        print(f"{len(train_pairs)} train pairs, {len(test_pairs)} test pairs")
    else:
        ds = data_io.load_feature_dataset(args.dataset, args.scale_n)
        train_ids, test_ids = data_io.split_ids(ds.ids, args.test_frac, args.seed)
        data_io.save_feature_dataset(ds.subset(train_ids), args.out_train)
        data_io.save_ids(test_ids, args.out_test)
        print(f"{len(train_ids)} train items, {len(test_ids)} test items")


def cmd_gen_triplets(args):
    if args.mode == "pairwise":
        if not args.pairs:
            raise UsageError("--mode pairwise needs --pairs")
        ds = data_io.load_pair_dataset(args.dataset, args.pairs, args.scale_n)
        quads, stats = generate_quadruplets_pairwise(ds, args.seed, return_stats=True)
        extra = f" ({stats.ties_skipped} ties skipped, {stats.references_skipped} references skipped)"
    else:
        ds = data_io.load_feature_dataset(args.dataset, args.scale_n)
        quads = generate_quadruplets_single(ds, args.pairs_per_anchor, args.seed)
        extra = ""
    data_io.save_quadruplets(quads, args.out)
    print(f"wrote {len(quads)} quadruplets to {args.out}{extra}")


def _config_with_flags(args) -> TrainConfig:
    cfg = data_io.load_config(args.config) if args.config else TrainConfig()
    if args.margin is not None and args.mode != "fixed":
        raise UsageError("--margin is only valid with --mode fixed")
    if args.mode == "fixed":
        cfg = replace(cfg, margin_mode=MarginMode.fixed(args.margin if args.margin is not None
                                                       else cfg.margin_mode.m))
    elif args.mode == "adaptive":
        cfg = replace(cfg, margin_mode=MarginMode.adaptive())
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_train(args):
    cfg = _config_with_flags(args)
    ds = _load_items(args, need_mos=cfg.train_head)
    quads = data_io.load_quadruplets(args.quads)
    net0 = init_net(ds.features.shape[1], cfg.hidden_dims, cfg.embed_dim, cfg.activation, seed=cfg.seed)
    try:
        net, head, report = train(net0, None, ds, quads, cfg)
    except NumericFailureError as exc:
        if exc.report is not None:
            data_io.save_report(exc.report, args.out_report)
        raise
    data_io.save_model(net, args.out_model, head)
    data_io.save_report(report, args.out_report)
    last = f"{report.triplet_loss[-1]:.5f}" if report.triplet_loss else "n/a"
    print(f"trained {report.epochs_run} epoch(s); final triplet loss {last}; "
          f"collapsed={report.collapsed}; skipped degenerate={report.skipped_degenerate}")


def cmd_eval(args):
    net, head = data_io.load_model(args.model)
    if args.method == "pairwise":
        if not args.pairs:
            raise UsageError("--method pairwise needs --pairs")
        ds = data_io.load_pair_dataset(args.dataset, args.pairs, args.scale_n)
        test = data_io.load_pairs(args.test_split, args.scale_n) if args.test_split else ds.pairs
        result = eval_pairwise(net, ds, test)
    else:
        ds = data_io.load_feature_dataset(args.dataset, args.scale_n)
        test_ids = data_io.load_ids(args.test_split) if args.test_split else ds.ids
        if args.method == "reference":
            result = eval_reference(net, ds, test_ids)
        else:
            if head is None:
                raise UsageError("--method regression needs a model trained with a regression head")
            result = eval_regression(net, head, ds, test_ids)
    data_io.atomic_write(args.out, _json(result.to_dict()))
    sys.stdout.write(format_table([result]))


def cmd_stats(args):
    if args.bins < 1:
        raise UsageError("--bins must be >= 1")
    quads = data_io.load_quadruplets(args.quads)
    edges, counts = margin_histogram(quads, args.bins)
    rows = ([data_io.fmt(lo), data_io.fmt(hi), str(int(c))] for lo, hi, c in zip(edges[:-1], edges[1:], counts))
    text = data_io._csv_text(["bin_lo", "bin_hi", "count"], rows)
    if args.model:
        if not args.dataset:
            raise UsageError("--model needs --dataset")
        net, _ = data_io.load_model(args.model)
        hc = hardness_counts(net, _load_items(args, need_mos=False), quads, args.margin)
    data_io.atomic_write(args.out, text)
    print(f"{len(quads)} quadruplets in {args.bins} bins -> {args.out}")
    if args.model:
        print("hardness: " + ", ".join(f"{k}={v}" for k, v in hc.items()))


def cmd_compare(args):
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    ds = data_io.load_feature_dataset(args.dataset, args.scale_n)
    cfg_f = data_io.load_config(args.config_fixed) if args.config_fixed else \
        TrainConfig(margin_mode=MarginMode.fixed(0.5))
    cfg_a = data_io.load_config(args.config_adaptive) if args.config_adaptive else TrainConfig()
    if cfg_f.margin_mode.kind != "fixed":
        raise UsageError("--config-fixed must use a fixed margin")
    if cfg_a.margin_mode.kind != "adaptive":
        raise UsageError("--config-adaptive must use the adaptive margin")
    seeds = [args.seed + k for k in range(args.seeds)]
    result = run_comparison(ds, cfg_f, cfg_a, seeds, args.pairs_per_anchor, args.test_frac)
    data_io.atomic_write(args.out, _json(result.to_dict()))
    sys.stdout.write(result.table())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaptive-triplet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--scale-n", type=int, default=5, help="ratings span [1, n] (default 5)")
        return sp

    sp = add("gen-data", cmd_gen_data, "generate a synthetic planted-score dataset")
    sp.add_argument("--config", help="synthetic spec JSON (defaults if omitted)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True, help="items CSV")
    sp.add_argument("--pairs-out", help="also generate pair ratings into this CSV")
    sp.add_argument("--refs", type=int)
    sp.add_argument("--evals-per-ref", type=int)

    sp = add("split", cmd_split, "seeded train/test split")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--pairs", help="pairs CSV: split by reference instead of by item")
    sp.add_argument("--test-frac", type=float, default=0.2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-train", required=True)
    sp.add_argument("--out-test", required=True)

    sp = add("gen-triplets", cmd_gen_triplets, "build quadruplets with adaptive margins")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--pairs")
    sp.add_argument("--mode", choices=("single", "pairwise"), default="single")
    sp.add_argument("--pairs-per-anchor", type=int, default=DEFAULT_PAIRS_PER_ANCHOR)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train an embedding network on quadruplets")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--quads", required=True)
    sp.add_argument("--config")
    sp.add_argument("--mode", choices=("fixed", "adaptive"))
    sp.add_argument("--margin", type=float, help="fixed margin (fixed mode only)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out-model", required=True)
    sp.add_argument("--out-report", required=True)

    sp = add("eval", cmd_eval, "SROCC ranking evaluation")
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--pairs")
    sp.add_argument("--test-split", help="ids file (reference/regression) or pairs CSV (pairwise)")
    sp.add_argument("--method", choices=("reference", "regression", "pairwise"), default="reference")
    sp.add_argument("--out", required=True)

    sp = add("stats", cmd_stats, "margin histogram (CSV) and optional hardness breakdown")
    sp.add_argument("--quads", required=True)
    sp.add_argument("--bins", type=int, default=10)
    sp.add_argument("--model")
    sp.add_argument("--dataset")
    sp.add_argument("--margin", type=float, help="classify against a fixed margin instead")
    sp.add_argument("--out", required=True)

    sp = add("compare", cmd_compare, "regression vs fixed vs adaptive over several seeds")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--config-fixed")
    sp.add_argument("--config-adaptive")
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0, help="first seed")
    sp.add_argument("--pairs-per-anchor", type=int, default=DEFAULT_PAIRS_PER_ANCHOR)
    sp.add_argument("--test-frac", type=float, default=0.2)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, ParseError, InvalidInputError, InvalidConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
