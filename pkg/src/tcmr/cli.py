"""Command-line interface tying the pipeline together.

Subcommands: ingest, fit-temporal, train, eval, query, curves, synth.
Exit codes: 0 ok, 1 usage, 2 data/config error, 3 numeric failure.
Summaries are printed as JSON on stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as cp
from . import retrieval as rt
from . import synth as sy
from . import temporal as tp
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .projection import (
    DegenerateProjectionError,
    NonFiniteGradientError,
    load_checkpoint,
    save_checkpoint,
)
from .train import fit_temporal_model, train_model, write_training_log

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Bundle helpers


def bundle_paths(directory):
    directory = Path(directory)
    return directory / "manifest.jsonl", directory / "features.bin", directory / "vocab.txt"


def load_bundle(directory, time_unit):
    manifest, features, vocab = bundle_paths(directory)
    return cp.load_corpus(
        manifest, features, vocab if vocab.exists() else None, time_unit=time_unit
    )


def save_bundle(corpus, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest, features, vocab = bundle_paths(directory)
    cp.save_corpus(corpus, manifest, features, vocab)


def _emit(payload: dict):
    print(json.dumps(payload, sort_keys=True))


def _splits(corpus, cfg: RunConfig):
    spec = cp.SplitSpec(
        dev_fraction=cfg.dev_fraction, val_fraction_of_dev=cfg.val_fraction, seed=cfg.seed
    )
    return cp.split(corpus, spec)


# ---------------------------------------------------------------------------
# Commands


def cmd_ingest(args) -> int:
    corpus = cp.load_corpus(
        args.manifest, args.features, args.vocab, time_unit=args.time_unit
    )
    save_bundle(corpus, args.out)
    _emit(
        {
            "documents": len(corpus),
            "d_image": corpus.d_image,
            "d_text": corpus.d_text,
            "categories": len(corpus.categories),
            "num_slices": corpus.time_axis.num_slices,
            "dropped_tokens": corpus.dropped_token_count,
        }
    )
    return EXIT_OK


def cmd_fit_temporal(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    corpus = load_bundle(args.corpus, cfg.time_unit)
    train, _, _ = _splits(corpus, cfg)
    model = fit_temporal_model(args.kind, train, cfg)
    tp.write_temporal_model(args.out, model)
    summary = {"kind": args.kind, "train_documents": len(train)}
    if args.kind == "category":
        summary["categories_with_curves"] = len(model.curves)
    if args.kind == "topic":
        summary["effective_slices"] = model.num_effective_slices
        summary["vocabulary"] = len(model.vocabulary)
    _emit(summary)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    corpus = load_bundle(args.corpus, cfg.time_unit)
    train, val, _ = _splits(corpus, cfg)
    temporal_model = None
    if args.temporal is not None:
        temporal_model = tp.read_temporal_model(args.temporal)
    if cfg.lam > 0 and temporal_model is None:
        raise ConfigError("lambda > 0 requires --temporal with a fitted model")
    result = train_model(train, val, cfg, temporal_model=temporal_model)
    save_checkpoint(args.out, result.model, config=cfg.to_dict(), seed=cfg.seed)
    if args.log is not None:
        write_training_log(result.history, args.log)
    _emit(
        {
            "epochs_run": len(result.history),
            "best_epoch": result.best_epoch,
            "best_val_map": result.best_val_map,
            "checkpoint": str(args.out),
        }
    )
    return EXIT_OK


def _restore(args):
    """Checkpoint + bundle -> (config, model, splits, tf-idf stats)."""
    model, config_snapshot, _ = load_checkpoint(args.checkpoint)
    cfg = config_from_dict(config_snapshot)
    corpus = load_bundle(args.corpus, cfg.time_unit)
    train, val, test = _splits(corpus, cfg)
    stats = cp.document_frequencies(train)
    return cfg, model, corpus, (train, val, test), stats


def _parse_k_list(raw):
    try:
        ks = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"bad k list {raw!r}") from None
    if not ks:
        raise UsageError("empty k list")
    return ks


def cmd_eval(args) -> int:
    cfg, model, _, (train, _, test), stats = _restore(args)
    k = args.k or cfg.k_eval
    k_list = _parse_k_list(args.k_list) if args.k_list else list(rt.DEFAULT_SCOPE_KS)
    index = rt.build_index(test, model, stats)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"k": k, "test_documents": len(test)}
    for direction, report in rt.evaluate_both_directions(
        index, k=k, k_list=k_list, bins=cfg.eval_bins, ndcg_gain=cfg.ndcg_gain
    ).items():
        tag = direction.lower()
        rt.write_report_json(report, out_dir / f"report-{tag}.json")
        rt.write_scope_csv(report, out_dir / f"scope-{tag}.csv")
        rt.write_temporal_csv(report, out_dir / f"temporal-{tag}.csv")
        summary[f"map_{tag}"] = report.map_at_k
        summary[f"ndcg_{tag}"] = report.ndcg_at_k
        summary[f"temporal_fit_{tag}"] = report.temporal_fit
    _emit(summary)
    return EXIT_OK


def cmd_curves(args) -> int:
    cfg, model, _, (_, _, test), stats = _restore(args)
    k_list = _parse_k_list(args.k_list) if args.k_list else list(rt.DEFAULT_SCOPE_KS)
    index = rt.build_index(test, model, stats)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {}
    for direction, report in rt.evaluate_both_directions(
        index, k=max(k_list), k_list=k_list, bins=cfg.eval_bins
    ).items():
        tag = direction.lower()
        rt.write_scope_csv(report, out_dir / f"curve-{tag}.csv")
        summary[f"curve_{tag}"] = [[k, v] for k, v in report.scope_curve]
    _emit(summary)
    return EXIT_OK


def cmd_query(args) -> int:
    if (args.text is None) == (args.image_row is None):
        raise UsageError("provide exactly one of --text or --image-row")
    cfg, model, corpus, _, stats = _restore(args)
    index = rt.build_index(corpus, model, stats)
    if args.text is not None:
        counts = {}
        for token in args.text.split():
            counts[token] = counts.get(token, 0) + 1
        known = [t for t in counts if t in stats.token_index and stats.doc_freq[stats.token_index[t]] > 0]
        if not known:
            print(
                "warning: no query token is in the training vocabulary;"
                " projecting an empty text vector",
                file=sys.stderr,
            )
        query = rt.Query(text_counts=counts)
    else:
        if not 0 <= args.image_row < len(corpus.documents):
            raise cp.CorpusError(f"--image-row {args.image_row} outside corpus")
        query = rt.Query(image_feat=corpus.documents[args.image_row].image_feat)
    results, truncated = rt.query_topk(index, query, model, stats, k=args.k)
    by_id = {doc.id: doc for doc in corpus.documents}
    axis = corpus.time_axis
    for doc_id, score in results:
        doc = by_id[doc_id]
        _emit(
            {
                "doc_id": doc_id,
                "score": round(score, 6),
                "timestamp": axis.to_epoch(doc.timestamp),
                "labels": sorted(doc.labels),
            }
        )
    if truncated:
        print(f"note: index holds only {len(index)} documents", file=sys.stderr)
    return EXIT_OK


def _parse_modes(raw):
    modes = []
    for part in raw.split(","):
        fields = part.split(":")
        if len(fields) != 3:
            raise UsageError(f"bad mode spec {part!r}, expected center:width:weight")
        try:
            modes.append(tuple(float(x) for x in fields))
        except ValueError:
            raise UsageError(f"bad mode spec {part!r}") from None
    return modes


def cmd_synth(args) -> int:
    spec = sy.SynthSpec(
        num_categories=args.categories,
        docs_per_category=args.docs_per_category,
        timespan=args.timespan,
        modes=_parse_modes(args.modes),
        d_image=args.d_image,
        image_noise=args.image_noise,
        vocab_size=args.vocab_size,
        words_per_doc=args.words_per_doc,
        word_concentration=args.concentration,
        drift=args.drift,
        seed=args.seed,
    )
    corpus, truth = sy.generate(spec)
    save_bundle(corpus, args.out)
    truth_path = Path(args.out) / "truth.json"
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(truth.to_dict(), fh, sort_keys=True)
    _emit(
        {
            "documents": len(corpus),
            "categories": len(corpus.categories),
            "d_image": corpus.d_image,
            "d_text": corpus.d_text,
            "num_slices": corpus.time_axis.num_slices,
            "out": str(args.out),
        }
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    parser = _Parser(prog="tcmr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and canonicalize a corpus bundle")
    p.add_argument("manifest")
    p.add_argument("features")
    p.add_argument("--vocab", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--time-unit", type=float, default=cp.DEFAULT_TIME_UNIT)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit-temporal", help="fit a temporal correlation model")
    p.add_argument("--kind", required=True, choices=("recency", "category", "topic"))
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_temporal)

    p = sub.add_parser("train", help="train the projection networks")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--temporal", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--k-list", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curves", help="precision-scope curves on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-list", default=None)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("query", help="run one cross-modal query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--text", default=None)
    p.add_argument("--image-row", type=int, default=None)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("synth", help="generate a synthetic corpus bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--categories", type=int, default=10)
    p.add_argument("--docs-per-category", type=int, default=200)
    p.add_argument("--timespan", type=float, default=30.0)
    p.add_argument("--modes", default="8:1.5:0.5,22:1.5:0.5")
    p.add_argument("--d-image", type=int, default=16)
    p.add_argument("--image-noise", type=float, default=0.1)
    p.add_argument("--vocab-size", type=int, default=60)
    p.add_argument("--words-per-doc", type=int, default=8)
    p.add_argument("--concentration", type=float, default=0.2)
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateProjectionError, NonFiniteGradientError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (cp.CorpusError, ConfigError, tp.TemporalModelError, sy.SynthError,
            rt.MetricError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
