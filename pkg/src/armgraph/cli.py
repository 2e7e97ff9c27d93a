"""Command line: extract, stats, prepare, train, evaluate, predict.

Hyperparameter flags keep the structure2vec names (``--latent-dim``,
``--max-lv``, ...). Options can also come from a ``key = value`` config
file given with ``--config``; flags on the command line win.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import model, pipeline
from .dataset import load_dataset
from .elf import ELF_MAGIC
from .errors import ArmGraphError, FeatureMismatch
from .metrics import confusion, metrics
from .prep import UNKNOWN_TAG, DatasetManifest, Label, TagDictionary, recovery_to_graph
from .validation import map_unknown_tags

logger = logging.getLogger("armgraph")


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _add_common(p):
    p.add_argument("--config", help="key = value file with option defaults")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _add_libs(p):
    p.add_argument("--lib-path", action="append", default=[], dest="lib_paths",
                   help="library search directory (repeatable; may contain {sample_id} or {sha256})")
    p.add_argument("--strict-libs", action="store_true",
                   help="fail when a needed library is not found")


def _add_jobs(p):
    p.add_argument("--jobs", type=int, default=os.cpu_count(),
                   help="parallel worker processes (default: core count)")


def _add_hyperparams(p):
    d = model.Hyperparams()
    p.add_argument("--gm", default=d.gm, help="mean_field (loopy_bp is not implemented)")
    p.add_argument("--mode", default=d.mode, choices=["cpu", "gpu"],
                   help="accepted for compatibility; there is one numpy backend")
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--feat-dim", type=int, default=d.feat_dim)
    p.add_argument("--num-class", type=int, default=d.num_class)
    p.add_argument("--num-epochs", type=int, default=d.num_epochs)
    p.add_argument("--latent-dim", type=int, default=d.latent_dim)
    p.add_argument("--out-dim", type=int, default=d.out_dim)
    p.add_argument("--hidden", type=int, default=d.hidden)
    p.add_argument("--max-lv", type=int, default=d.max_lv)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--optimizer", default=d.optimizer, choices=["adam", "sgd"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="armgraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="recover CFG/call graphs and write edge lists + stats.tsv")
    p.add_argument("binaries", nargs="+")
    p.add_argument("-o", "--output-dir", required=True)
    _add_libs(p)
    _add_jobs(p)
    _add_common(p)

    p = sub.add_parser("stats", help="print graph statistics for binaries")
    p.add_argument("binaries", nargs="+")
    p.add_argument("--coverage", action="store_true",
                   help="also compare all-seed vs entry-only address coverage")
    _add_libs(p)
    _add_jobs(p)
    _add_common(p)

    p = sub.add_parser("prepare", help="tag, balance and split a manifest into dataset files")
    p.add_argument("manifest")
    p.add_argument("-o", "--output-dir", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--graph-source", choices=["call_graph", "cfg"], default="call_graph")
    p.add_argument("--include-library-nodes", action="store_true")
    p.add_argument("--no-verify-digests", action="store_true")
    _add_libs(p)
    _add_jobs(p)
    _add_common(p)

    p = sub.add_parser("train", help="train on a dataset file and write a checkpoint")
    p.add_argument("dataset")
    p.add_argument("-o", "--checkpoint", required=True)
    p.add_argument("--tags", help="tag dictionary; sizes feat_dim when --feat-dim is 0")
    p.add_argument("--report", help="where to write the per-epoch report (default: <checkpoint>.report.tsv)")
    _add_hyperparams(p)
    _add_common(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset file")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--kv", help="also write the key=value report to this file")
    _add_common(p)

    p = sub.add_parser("predict", help="classify one serialized graph or one ELF binary")
    p.add_argument("checkpoint")
    p.add_argument("input", help="dataset file holding one graph, or an ELF binary")
    p.add_argument("--tags", help="tag dictionary (required for ELF input)")
    p.add_argument("--graph-source", choices=["call_graph", "cfg"], default="call_graph")
    p.add_argument("--include-library-nodes", action="store_true")
    _add_libs(p)
    _add_common(p)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        # re-parse with config values as defaults so explicit flags still win
        sub = parser._subparsers._group_actions[0].choices[args.command]
        config = read_config(args.config)
        known = {a.dest: a for a in sub._actions}
        unknown = set(config) - set(known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        defaults = {}
        for key, text in config.items():
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = text.lower() in ("1", "true", "yes", "on")
            elif isinstance(action, argparse._AppendAction):
                defaults[key] = [v.strip() for v in text.split(",") if v.strip()]
            else:
                defaults[key] = action.type(text) if action.type else text
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _hyperparams(args) -> model.Hyperparams:
    if args.gm == "loopy_bp":
        raise NotImplementedError("--gm loopy_bp is not implemented; use mean_field")
    names = {f.name for f in dataclasses.fields(model.Hyperparams)}
    return model.Hyperparams(**{k: v for k, v in vars(args).items() if k in names})


def cmd_extract(args) -> int:
    rows, failures = pipeline.extract(args.binaries, args.output_dir, args.lib_paths,
                                      args.strict_libs, args.jobs)
    print(f"extracted {len(rows)} of {len(args.binaries)} samples into {args.output_dir}")
    for path, error in failures.items():
        print(f"failed: {path}: {error}", file=sys.stderr)
    return 0 if rows else 1


def cmd_stats(args) -> int:
    jobs = [(p, pipeline.sample_search_paths(args.lib_paths), args.strict_libs) for p in args.binaries]
    results = pipeline.run_jobs(pipeline._safe_job, jobs, args.jobs)
    print(pipeline.StatsRow.HEADER)
    ok = 0
    for name, path, (recovery, error) in zip(pipeline._sample_names(args.binaries), args.binaries, results):
        if error is not None:
            print(f"failed: {path}: {error}", file=sys.stderr)
            continue
        ok += 1
        print(pipeline.stats_row(name, path, recovery).tsv())
    if args.coverage:
        print("sample\tonly_all_seeds\tonly_entry\tboth\tneither")
        for name, path, (recovery, error) in zip(pipeline._sample_names(args.binaries), args.binaries, results):
            if error is None:
                counts = pipeline.coverage_table(path, args.lib_paths, args.strict_libs)
                print("\t".join(map(str, (name, *counts))))
    return 0 if ok else 1


def cmd_prepare(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    prepared = pipeline.prepare(
        manifest, seed=args.seed, train_fraction=args.train_fraction, source=args.graph_source,
        include_libraries=args.include_library_nodes, lib_paths=args.lib_paths,
        strict=args.strict_libs, jobs=args.jobs, verify_digests=not args.no_verify_digests)
    pipeline.write_prepared(prepared, args.output_dir)
    print(f"train: {len(prepared.train_graphs)} graphs, test: {len(prepared.test_graphs)} graphs, "
          f"tags: {len(prepared.tags)}")
    return 0


def cmd_train(args) -> int:
    graphs = load_dataset(args.dataset)
    hp = _hyperparams(args)
    if args.tags and hp.feat_dim == 0:
        max_tag = max((max(g.node_tags, default=0) for g in graphs), default=0)
        hp = dataclasses.replace(hp, feat_dim=max(len(TagDictionary.load(args.tags)), max_tag, 1))
    params, report, hp = model.train(graphs, hp)
    model.save_checkpoint(args.checkpoint, params, hp)
    report_path = args.report or f"{args.checkpoint}.report.tsv"
    Path(report_path).write_text(report.dumps())
    last = f"loss {report.epoch_loss[-1]:.6f}, accuracy {report.epoch_accuracy[-1]:.4f}" if report.epoch_loss else "no epochs"
    print(f"trained {hp.num_epochs} epochs on {len(graphs)} graphs ({last}); checkpoint {args.checkpoint}")
    return 0


def check_compatible(graphs, params: model.ModelParams):
    for i, g in enumerate(graphs):
        if g.node_tags and max(g.node_tags) > params.feat_dim:
            raise FeatureMismatch(
                f"graph {i}: tag {max(g.node_tags)} exceeds checkpoint feat_dim {params.feat_dim}")
        if g.label is not None and g.label >= params.num_class:
            raise FeatureMismatch(
                f"graph {i}: label {g.label} outside checkpoint num_class {params.num_class}")


def cmd_evaluate(args) -> int:
    params, hp = model.load_checkpoint(args.checkpoint)
    graphs = load_dataset(args.dataset)
    check_compatible(graphs, params)
    preds = [model.predict(g, params, hp.max_lv)[0] for g in graphs]
    cm = confusion(preds, [g.label for g in graphs])
    report = metrics(cm)
    print(report.format_table(cm), end="")
    print()
    print(report.format_kv(cm), end="")
    if args.kv:
        Path(args.kv).write_text(report.format_kv(cm))
    return 0


def cmd_predict(args) -> int:
    params, hp = model.load_checkpoint(args.checkpoint)
    with open(args.input, "rb") as fh:
        is_elf = fh.read(4) == ELF_MAGIC
    if is_elf:
        if not args.tags:
            raise FeatureMismatch("--tags is required to classify an ELF binary")
        tags = TagDictionary.load(args.tags)
        recovery = pipeline.analyze_binary(args.input, args.lib_paths, args.strict_libs)
        graph = recovery_to_graph(recovery, tags, args.graph_source, args.include_library_nodes,
                                  unknown_tag=UNKNOWN_TAG)
        # blocks learned after the checkpoint's dictionary count as unknown
        (graph,) = map_unknown_tags([graph], params.feat_dim)
    else:
        graphs = load_dataset(args.input)
        if len(graphs) != 1:
            raise FeatureMismatch(f"{args.input} holds {len(graphs)} graphs; predict expects one")
        check_compatible(graphs, params)
        graph = graphs[0]
    cls, p = model.predict(graph, params, hp.max_lv)
    name = Label(cls).name.lower() if cls in (0, 1) else str(cls)
    print(f"class={cls} ({name})")
    print("probabilities=" + " ".join(f"{v:.6f}" for v in np.asarray(p)))
    return 0


COMMANDS = {
    "extract": cmd_extract,
    "stats": cmd_stats,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NotImplementedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArmGraphError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
