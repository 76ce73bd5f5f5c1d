"""Command line driver: dataset prep, training, evaluation, forecasting.

Exit codes distinguish failure classes: 3 data format, 4 configuration,
5 checkpoint, 6 other runtime errors. Each failure prints one diagnostic
line to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict

from .data import DataFormatError, GraphHistory, load_dataset
from .evaluation import build_filter_index, filter_ids_for, filtered_rank, run_evaluation
from .gradaudit import run_audit
from .reasoner import Query, multi_step_reason, write_predictions
from .structural import ConfigError
from .synth import GENERATORS, generate
from .training import (
    CheckpointError,
    build_model_from_checkpoint,
    load_checkpoint,
    make_config,
    parse_config_file,
    run_training,
)

EXIT_DATA = 3
EXIT_CONFIG = 4
EXIT_CHECKPOINT = 5
EXIT_RUNTIME = 6

# (flag, TrainConfig field, type); shared by train and the eval-time verbs
OVERRIDE_FLAGS = (
    ("--dim", "dim", int),
    ("--channels", "channels", int),
    ("--layers", "layers", int),
    ("--window", "window", int),
    ("--learning-rate", "learning_rate", float),
    ("--batch-size", "batch_size", int),
    ("--epochs", "epochs", int),
    ("--dropout", "dropout", float),
    ("--seed", "seed", int),
    ("--composition", "composition", str),
    ("--normalization", "normalization", str),
    ("--topk", "top_k", int),
    ("--feedback-mode", "feedback", str),
    ("--filter-mode", "filter_mode", str),
    ("--score-mode", "score_mode", str),
    ("--eval-every", "eval_every", int),
)
EVAL_FLAGS = ("top_k", "feedback", "filter_mode", "score_mode")
LOSS_TERMS = ("temporal", "structural", "repetitive")


def _add_override_flags(parser, names=None):
    for flag, dest, typ in OVERRIDE_FLAGS:
        if names is None or dest in names:
            parser.add_argument(flag, dest=dest, type=typ, default=None)
    parser.add_argument("--binarize", dest="binarize", default=None,
                        action=argparse.BooleanOptionalAction)


def _overrides_from(args):
    out = {}
    for _, dest, _ in OVERRIDE_FLAGS:
        value = getattr(args, dest, None)
        if value is not None:
            out[dest] = value
    if getattr(args, "binarize", None) is not None:
        out["binarize"] = args.binarize
    terms = getattr(args, "loss_terms", None)
    if terms is not None:
        chosen = {t.strip() for t in terms.split(",") if t.strip()}
        unknown = chosen - set(LOSS_TERMS)
        if unknown:
            raise ConfigError(f"unknown loss terms {sorted(unknown)}; options: {LOSS_TERMS}")
        for term in LOSS_TERMS:
            out[f"loss_{term}"] = term in chosen
    return out


# ---------------------------------------------------------------------------
# verbs


def cmd_prepare(args):
    bundle = load_dataset(args.data_dir)
    timestamps = {q.timestamp for split in bundle.splits().values() for q in split}
    print(
        f"entities={bundle.num_entities} relations={bundle.num_relations} "
        f"train={len(bundle.train)} valid={len(bundle.valid)} test={len(bundle.test)} "
        f"timestamps={len(timestamps)} gap={bundle.time_gap}"
    )
    return 0


def cmd_synth(args):
    counts = generate(args.kind, args.out_dir, seed=args.seed)
    print(
        f"wrote {args.kind} dataset to {args.out_dir}: "
        f"train={counts['train']} valid={counts['valid']} test={counts['test']}"
    )
    return 0


def cmd_train(args):
    bundle = load_dataset(args.data_dir)
    file_values = parse_config_file(args.config) if args.config else None
    overrides = _overrides_from(args)
    if args.resume:
        base = asdict(load_checkpoint(args.resume).config)
        config = make_config(None, {**base, **(file_values or {}), **overrides})
    else:
        config = make_config(file_values, overrides)

    def progress(row):
        if not args.quiet:
            parts = [f"epoch={row['epoch']}"]
            for key in ("loss", "structural", "repetitive", "temporal", "valid_mrr"):
                if key in row and row[key] == row[key]:  # skip NaNs
                    parts.append(f"{key}={row[key]:.6f}")
            print(" ".join(parts))

    model, rows = run_training(
        bundle, config,
        checkpoint_path=args.checkpoint, log_path=args.log,
        resume_from=args.resume, progress=progress,
    )
    if rows:
        print(f"trained epochs={len(rows)} final_loss={rows[-1]['loss']:.6f}")
    else:
        print("nothing to train: checkpoint already covers the requested epochs")
    if args.checkpoint:
        print(f"checkpoint written to {args.checkpoint}")
    return 0


def _load_model(args):
    bundle = load_dataset(args.data_dir)
    checkpoint = load_checkpoint(args.checkpoint)
    model, config = build_model_from_checkpoint(bundle, checkpoint)
    merged = {**asdict(config), **_overrides_from(args)}
    knobs = {key: merged[key] for key in (*EVAL_FLAGS, "binarize")}
    return bundle, model, knobs


def cmd_eval(args):
    bundle, model, knobs = _load_model(args)
    if not bundle.test:
        raise DataFormatError("dataset has no test split to evaluate")
    history = GraphHistory.from_quadruples(
        bundle.train + bundle.valid, bundle.num_relations
    )
    report, _, _ = run_evaluation(
        model, history, bundle.test, bundle.num_relations,
        filter_quadruples=bundle.train + bundle.valid + bundle.test,
        filter_mode=knobs["filter_mode"], feedback=knobs["feedback"],
        score_mode=knobs["score_mode"], top_k=knobs["top_k"],
        binarize=knobs["binarize"],
    )
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(report.to_json())
    print(
        f"mrr={report.mrr:.4f} hits1={report.hits[1]:.4f} "
        f"hits3={report.hits[3]:.4f} hits10={report.hits[10]:.4f} "
        f"queries={report.count}"
    )
    return 0


def _parse_query_file(path):
    queries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) not in (3, 4):
                raise DataFormatError(
                    f"{path}:{lineno}: expected 'subject relation target [truth]'"
                )
            try:
                numbers = [int(p) for p in parts]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer field")
            queries.append(Query(*numbers))
    if not queries:
        raise DataFormatError(f"{path}: no queries")
    return queries


def cmd_predict(args):
    bundle, model, knobs = _load_model(args)
    if args.queries:
        queries = _parse_query_file(args.queries)
    else:
        if not bundle.test:
            raise DataFormatError("no --queries file and dataset has no test split")
        from .reasoner import queries_from_quadruples

        queries = queries_from_quadruples(bundle.test, bundle.num_relations)
    history = GraphHistory.from_quadruples(
        bundle.train + bundle.valid, bundle.num_relations
    )
    answers = multi_step_reason(
        model, history, queries,
        top_k=knobs["top_k"], feedback=knobs["feedback"],
        score_mode=knobs["score_mode"], binarize=knobs["binarize"],
    )
    index = build_filter_index(
        bundle.train + bundle.valid + bundle.test,
        bundle.num_relations, knobs["filter_mode"],
    )
    ranks = [
        filtered_rank(ans.scores, q.truth,
                      filter_ids_for(index, q, knobs["filter_mode"]))
        if q.truth >= 0 else -1
        for ans, q in zip(answers, queries)
    ]
    write_predictions(answers, args.output, ranks=ranks, top_n=args.top)
    print(f"wrote {len(answers)} predictions to {args.output}")
    return 0


def cmd_gradcheck(args):
    ok = run_audit(printer=print, seed=args.seed)
    print("gradient audit passed" if ok else "gradient audit FAILED")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# wiring


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tkgcast",
        description="Temporal knowledge graph forecasting: train on historical "
                    "event graphs, predict future ones, answer future queries.",
    )
    parser.add_argument("--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate a dataset directory, print its shape")
    p.add_argument("data_dir")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="write a synthetic dataset directory")
    p.add_argument("kind", choices=sorted(GENERATORS))
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("data_dir")
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--checkpoint", help="write the trained model to this file")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--log", help="CSV epoch log path")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--loss-terms", dest="loss_terms", default=None,
                   help="comma list from {temporal,structural,repetitive}")
    _add_override_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="filtered ranking metrics on the test split")
    p.add_argument("data_dir")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", help="write the metrics JSON here")
    _add_override_flags(p, names=set(EVAL_FLAGS))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write ranked answers for future queries")
    p.add_argument("data_dir")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", help="file of 'subject relation target [truth]' lines")
    p.add_argument("--output", default="predictions.tsv")
    p.add_argument("--top", type=int, default=20, help="ids listed per answer")
    _add_override_flags(p, names=set(EVAL_FLAGS))
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
