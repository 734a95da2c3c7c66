"""Command line interface: ``regather {synth,decompose,train,baseline,eval,report}``.

Graph inputs are the plain-text vertex / edge / schema / feature / label
files. ``--graph-dir`` points at a directory holding them under their
conventional names; individual ``--vertices`` etc. flags override.
Settings may also come from ``--config FILE`` (``key = value`` lines, keys
spelled like the long flags); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from ._alloc import tune_malloc
from .graph import GraphFormatError, graph_paths, load_features, load_graph, load_labels
from .metrics import aggregate, results_rows, results_table
from .model import CheckpointError, ModelConfig, load_checkpoint, save_checkpoint
from .relations import (
    DEFAULT_NNZ_CAP,
    RelationError,
    build_relation_set,
    dump_relation_set,
    homogeneous_relation_set,
    metapath_string,
    relation_catalog,
)
from .synth import SynthSpecError, dblp_like_spec, generate
from .training import SplitSpec, TrainConfig, TrainingError, make_split, train, trial_seeds

log = logging.getLogger("regather")

_ERRORS = (GraphFormatError, RelationError, CheckpointError, TrainingError, SynthSpecError, OSError, ValueError)


# config handling ------------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.lstrip("-").replace("-", "_")] = v
    return out


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in values.items():
        if k not in actions:
            raise ValueError(f"{known.config}: unknown setting {k!r}")
        a = actions[k]
        if isinstance(a, argparse._StoreTrueAction):
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        else:
            defaults[k] = a.type(v) if a.type else v
    sub.set_defaults(**defaults)


# argument groups -------------------------------------------------------------------

def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _fraction(s: str) -> float:
    v = float(s)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("must lie strictly between 0 and 1")
    return v


def _graph_args(p: argparse.ArgumentParser, features: bool) -> None:
    g = p.add_argument_group("graph input")
    g.add_argument("--graph-dir", type=Path, help="directory with vertices/edges/schema(/features/labels).txt")
    g.add_argument("--vertices", type=Path)
    g.add_argument("--edges", type=Path)
    g.add_argument("--schema", type=Path)
    if features:
        g.add_argument("--features", type=Path)
        g.add_argument("--labels", type=Path)


def _relation_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-order", type=_positive_int, default=3, help="highest relation order K (default 3)")
    p.add_argument("--nnz-cap", type=int, default=DEFAULT_NNZ_CAP, help="max non-zeros of any composed matrix")


def _train_args(p: argparse.ArgumentParser) -> None:
    m = p.add_argument_group("model")
    m.add_argument("--hidden-dim", type=_positive_int, default=64)
    m.add_argument("--fusion-dim", type=_positive_int, default=128)
    m.add_argument("--dropout", type=float, default=0.6)
    m.add_argument("--leaky-slope", type=float, default=0.2)
    m.add_argument("--restrict-fusion-mean", action="store_true",
                   help="average fusion scores over target-type vertices only")
    m.add_argument("--no-classifier", action="store_true", help="use the hidden layer as class scores")
    m.add_argument("--precision", choices=("64", "32"), default="64")
    o = p.add_argument_group("optimisation")
    o.add_argument("--lr", type=float, default=0.005)
    o.add_argument("--max-epochs", type=_positive_int, default=200)
    o.add_argument("--patience", type=_positive_int, default=100)
    o.add_argument("--weight-decay", type=float, default=0.0)
    o.add_argument("--loss-reduction", choices=("mean", "sum"), default="mean")
    o.add_argument("--monitor", choices=("loss", "f1"), default="loss")
    s = p.add_argument_group("split and trials")
    s.add_argument("--train-fraction", type=_fraction, default=0.8)
    s.add_argument("--val-fraction", type=_fraction, default=0.1)
    s.add_argument("--trials", type=_positive_int, default=1)
    s.add_argument("--dataset", default="dataset", help="name used in result tables")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value settings file")
    p.add_argument("--seed", type=int, default=0, help="root seed for every random choice")
    p.add_argument("--threads", type=_positive_int, default=1, help="BLAS threads (1 is bit-reproducible)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regather", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="write a synthetic fixture with a planted typed-path rule")
    _common(p)
    p.add_argument("--feature-mode", choices=("gaussian", "onehot", "correlated"), default="gaussian")
    p.add_argument("--rule-order", type=int, choices=(2, 3), default=2)
    p.add_argument("--scale", type=float, default=1.0)

    p = subs.add_parser("decompose", help="build and list the relation set")
    _common(p)
    _graph_args(p, features=False)
    _relation_args(p)
    p.add_argument("--dump-masks", action="store_true", help="write every mask as coordinate text")

    for name, text in (("train", "train the dual-attention model"),
                       ("baseline", "train on one homogenised relation (all edges, both directions)")):
        p = subs.add_parser(name, help=text)
        _common(p)
        _graph_args(p, features=True)
        _relation_args(p)
        _train_args(p)

    p = subs.add_parser("eval", help="score a checkpoint on its test split")
    _common(p)
    _graph_args(p, features=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--all-labeled", action="store_true", help="score every labeled vertex")
    p.add_argument("--nnz-cap", type=int, default=DEFAULT_NNZ_CAP)

    p = subs.add_parser("report", help="aggregate summary files into a results table")
    p.add_argument("summaries", nargs="+", type=Path, help="summary.json files written by train/baseline")
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


# helpers ----------------------------------------------------------------------------

def _resolve_inputs(args, features: bool) -> dict[str, Path]:
    base = graph_paths(args.graph_dir) if args.graph_dir else {}
    keys = ["vertices", "edges", "schema"] + (["features", "labels"] if features else [])
    out = {}
    for k in keys:
        path = getattr(args, k, None) or base.get(k)
        if path is None:
            raise ValueError(f"missing --{k} (or --graph-dir)")
        if not Path(path).is_file():
            raise FileNotFoundError(f"{k} file not found: {path}")
        out[k] = Path(path)
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, args, inputs: dict[str, Path], outputs: list[Path],
                   started: str) -> Path:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
              if not k.startswith("_")}
    manifest = {
        "command": command,
        "argv": getattr(args, "_argv", sys.argv[1:]),
        "config": config,
        "inputs": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in inputs.items()},
        "seed": getattr(args, "seed", None),
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "outputs": [str(p) for p in outputs],
        "versions": {"regather": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


# commands ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    started = _now()
    out = args.out or Path("synth")
    data = generate(dblp_like_spec(args.seed, args.feature_mode, args.scale, args.rule_order))
    paths = data.write(out)
    stats = data.graph.stats()
    print(json.dumps(stats, indent=2))
    write_manifest(out, "synth", args, {}, list(paths.values()), started)
    return 0


def cmd_decompose(args) -> int:
    started = _now()
    inputs = _resolve_inputs(args, features=False)
    graph = load_graph(inputs["vertices"], inputs["edges"], inputs["schema"])
    relset = build_relation_set(graph, args.max_order, args.nnz_cap)
    catalog = relation_catalog(relset, graph)
    print(catalog)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        outputs = [args.out / "catalog.txt"]
        outputs[0].write_text(catalog + "\n")
        if args.dump_masks:
            outputs.append(dump_relation_set(relset, graph, args.out / "masks"))
        write_manifest(args.out, "decompose", args, inputs, outputs, started)
    return 0


def _model_config(args, d_in: int, num_classes: int, seed: int) -> ModelConfig:
    return ModelConfig(
        d_in=d_in,
        num_classes=num_classes,
        d_h=num_classes if args.no_classifier else args.hidden_dim,
        d_q=args.fusion_dim,
        K=args.max_order,
        leaky_slope=args.leaky_slope,
        dropout=args.dropout,
        seed=seed,
        use_classifier=not args.no_classifier,
        restrict_fusion_mean=args.restrict_fusion_mean,
        dtype="float32" if args.precision == "32" else "float64",
    )


def _run_training(args, homogeneous: bool) -> int:
    started = _now()
    inputs = _resolve_inputs(args, features=True)
    graph = load_graph(inputs["vertices"], inputs["edges"], inputs["schema"])
    features = load_features(inputs["features"], graph.num_vertices)
    labels = load_labels(inputs["labels"], graph)
    relset = homogeneous_relation_set(graph) if homogeneous else build_relation_set(graph, args.max_order, args.nnz_cap)
    target_rows = graph.vertices_of_type(labels.target_type)
    out = args.out or Path("runs") / args.command
    out.mkdir(parents=True, exist_ok=True)
    tc = TrainConfig(lr=args.lr, max_epochs=args.max_epochs, patience=args.patience,
                     weight_decay=args.weight_decay, loss_reduction=args.loss_reduction, monitor=args.monitor)
    print(f"{relset.P} relations, {len(labels.vertices)} labeled {graph.vertex_type_names[labels.target_type]} "
          f"vertices, {labels.num_classes} classes", file=sys.stderr)

    outputs: list[Path] = []
    reports = []
    for k, seed in enumerate(trial_seeds(args.seed, args.trials)):
        split = make_split(labels, SplitSpec(args.train_fraction, args.val_fraction, seed))
        cfg = _model_config(args, features.shape[1], labels.num_classes, seed)
        report, model = train(features, labels, relset, cfg, tc, split, target_rows=target_rows)
        ckpt = out / f"trial_{k:02d}.ckpt"
        save_checkpoint(model, ckpt, extra={
            "split_seed": seed, "train_fraction": args.train_fraction, "val_fraction": args.val_fraction,
            "homogeneous": homogeneous, "nnz_cap": args.nnz_cap,
        })
        report.checkpoint = str(ckpt)
        rpath = out / f"trial_{k:02d}.json"
        rpath.write_text(report.to_json())
        outputs += [ckpt, rpath]
        reports.append(report)
        print(f"trial {k}: epochs {report.stopping_epoch} (best {report.best_epoch})  "
              f"macro-F1 {report.test_macro_f1:.2f}  micro-F1 {report.test_micro_f1:.2f}", file=sys.stderr)

    macro = aggregate([r.test_macro_f1 for r in reports], "Macro-F1")
    micro = aggregate([r.test_micro_f1 for r in reports], "Micro-F1")
    rows = results_rows(args.dataset, args.train_fraction, macro, micro,
                        model="baseline" if homogeneous else "REGATHER")
    beta = np.mean([r.beta for r in reports], axis=0)
    summary = {
        "dataset": args.dataset,
        "train_fraction": args.train_fraction,
        "model": "baseline" if homogeneous else "regather",
        "rows": rows,
        "per_trial": [{"macro": r.test_macro_f1, "micro": r.test_micro_f1, "epochs": r.stopping_epoch}
                      for r in reports],
        "beta": [{"relation": p, "metapaths": [metapath_string(s, graph) for s in prov], "beta": float(b)}
                 for p, (prov, b) in enumerate(zip(relset.provenance, beta))],
    }
    spath = out / "summary.json"
    spath.write_text(json.dumps(summary, indent=2))
    outputs.append(spath)
    print(results_table(rows))
    print()
    print("relation weights (mean over trials):")
    for item in sorted(summary["beta"], key=lambda x: -x["beta"])[:10]:
        print(f"  {item['beta']:.4f}  {' | '.join(item['metapaths'])}")
    write_manifest(out, args.command, args, inputs, outputs, started)
    return 0


def cmd_train(args) -> int:
    return _run_training(args, homogeneous=False)


def cmd_baseline(args) -> int:
    return _run_training(args, homogeneous=True)


def cmd_eval(args) -> int:
    from .metrics import f1_scores
    from .model import read_checkpoint

    started = _now()
    inputs = _resolve_inputs(args, features=True)
    graph = load_graph(inputs["vertices"], inputs["edges"], inputs["schema"])
    features = load_features(inputs["features"], graph.num_vertices)
    labels = load_labels(inputs["labels"], graph)
    meta, _ = read_checkpoint(args.checkpoint)
    extra = meta.get("extra", {})
    if extra.get("homogeneous"):
        relset = homogeneous_relation_set(graph)
    else:
        relset = build_relation_set(graph, meta["config"]["K"], extra.get("nnz_cap", args.nnz_cap))
    model = load_checkpoint(args.checkpoint, relset, target_rows=graph.vertices_of_type(labels.target_type))
    if args.all_labeled:
        idx = labels.vertices
    else:
        split = make_split(labels, SplitSpec(extra["train_fraction"], extra["val_fraction"], extra["split_seed"]))
        idx = split.test
    y = labels.dense(graph.num_vertices)
    pred = model.predict(np.asarray(features, dtype=model.config.dtype))
    macro, micro = f1_scores(pred[idx], y[idx], labels.num_classes)
    result = {"vertices": len(idx), "macro_f1": round(macro, 2), "micro_f1": round(micro, 2)}
    print(json.dumps(result))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        rpath = args.out / "eval.json"
        rpath.write_text(json.dumps(result, indent=2))
        write_manifest(args.out, "eval", args, {**inputs, "checkpoint": args.checkpoint}, [rpath], started)
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.summaries:
        rows += json.loads(Path(path).read_text())["rows"]
    rows.sort(key=lambda r: (r["dataset"], r["metric"], int(r["train_size"].rstrip("%"))))
    print(results_table(rows))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "results.txt").write_text(results_table(rows) + "\n")
        (args.out / "results.json").write_text(json.dumps(rows, indent=2))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "decompose": cmd_decompose,
    "train": cmd_train,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        sub_name = next((a for a in argv if a in COMMANDS), None)
        if sub_name:
            sub = parser._subparsers._group_actions[0].choices[sub_name]
            _apply_config(parser, sub, argv)
    except (ValueError, OSError, argparse.ArgumentTypeError) as exc:
        print(f"regather: error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    args._argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    tune_malloc()
    try:
        if hasattr(args, "threads"):
            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except _ERRORS as exc:
        print(f"regather: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
