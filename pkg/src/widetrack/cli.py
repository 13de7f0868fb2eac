"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import content as content_mod
from . import forest as forest_mod
from . import pipeline as pipeline_mod
from . import structural as structural_mod
from .domains import registrable_domain
from .filters import RuleSet, label_document, parse_overrides, parse_rules
from .graph import GraphError, NodeKey, build_widegraph, load_graph, save_graph, stats
from .ingest import HarParseError, read_trees, write_trees
from .pipeline import DataError, PipelineConfig
from .synth import EcosystemConfig, generate


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_rules(paths) -> RuleSet:
    text = "\n".join(Path(p).read_text(encoding="utf-8") for p in paths)
    return parse_rules(text)


def _load_feature_files(paths):
    """Join content (host-keyed) and structural (domain-keyed) tables into
    per-document vectors ordered [keywords | engineered | structural]."""
    content_part = None
    struct_part = None
    for path in paths:
        data = Path(path).read_bytes()
        first = data.split(b"\n", 1)[0].decode("utf-8")
        if first.startswith("host\t"):
            content_part = pipeline_mod.read_content_matrix(data)
        elif first.startswith("domain\t"):
            struct_part = structural_mod.load_struct_matrix(data)
        else:
            raise DataError(f"unrecognized feature file {path}")
    if content_part is None or struct_part is None:
        raise DataError("need one content and one structural feature file")
    keys, _, values = content_part
    vectors = {}
    for i, (host, kind) in enumerate(keys):
        parent = NodeKey(registrable_domain(host), kind)
        vectors[(host, kind)] = np.concatenate([values[i], struct_part.row(parent)])
    return vectors


def cmd_ingest(args) -> int:
    trees, skips = pipeline_mod.ingest_har_dir(args.har_dir)
    Path(args.out).write_bytes(write_trees(trees))
    print(f"parsed {len(trees)} sessions, skipped entries: {dict(skips) or 0}")
    return 0


def cmd_graph_build(args) -> int:
    trees = read_trees(Path(args.trees).read_bytes())
    graph = build_widegraph(trees)
    Path(args.out).write_bytes(save_graph(graph))
    print(f"graph: {len(graph.roots)} roots, {len(graph.nodes)} nodes, {len(graph.edges)} edges")
    return 0


def cmd_graph_stats(args) -> int:
    graph = load_graph(Path(args.graph).read_bytes())
    st = stats(graph)
    for key in (
        "roots",
        "nodes",
        "third_party_nodes",
        "edges",
        "edge_multiplicity_total",
        "documents",
        "avg_path_length",
    ):
        print(f"{key}: {st[key]}")
    print("edges by label:")
    for label, count in st["edges_by_label"].items():
        print(f"  {label}: {count}")
    print("top coverage (direct / indirect / in-degree):")
    for row in st["top_coverage"]:
        print(
            f"  {row['domain']} [{row['kind']}]: "
            f"{row['direct']:.4f} / {row['indirect']:.4f} / {row['in_degree']}"
        )
    return 0


def cmd_features_structural(args) -> int:
    graph = load_graph(Path(args.graph).read_bytes())
    matrix = structural_mod.refex_expand(
        structural_mod.build_base_matrix(graph),
        graph,
        depth=args.depth,
        threshold=args.prune,
        directed=args.directed,
    )
    Path(args.out).write_bytes(structural_mod.save_struct_matrix(matrix))
    print(f"structural matrix: {len(matrix.keys)} nodes x {len(matrix.columns)} features")
    return 0


def cmd_features_content(args) -> int:
    graph = load_graph(Path(args.graph).read_bytes())
    eligible, _ = pipeline_mod.filter_eligible(graph, args.min_in_degree)
    train_docs, _ = pipeline_mod.split_documents(
        eligible, fraction=args.train_frac, seed=args.split_seed
    )
    vocabulary = content_mod.build_vocabulary(
        train_docs, k=args.vocab_size, rank_by=args.rank
    )
    Path(args.out).write_bytes(
        pipeline_mod.write_content_matrix(eligible, vocabulary, clamp_idf=args.clamp_idf)
    )
    if args.vocab_out:
        Path(args.vocab_out).write_bytes(content_mod.save_vocabulary(vocabulary))
    print(
        f"content matrix: {len(eligible)} documents, vocabulary {len(vocabulary.terms)}"
        f" (built on {len(train_docs)} training documents)"
    )
    return 0


def cmd_label(args) -> int:
    graph = load_graph(Path(args.graph).read_bytes())
    ruleset = _read_rules(args.rules)
    overrides = (
        parse_overrides(Path(args.overrides).read_text(encoding="utf-8"))
        if args.overrides
        else None
    )
    labels = {
        (doc.host, doc.kind): label_document(ruleset, doc, overrides)
        for doc in graph.documents()
    }
    Path(args.out).write_bytes(pipeline_mod.write_labels_file(labels))
    n_ad = sum(1 for lab in labels.values() if lab.label == "adtracker")
    print(
        f"labeled {len(labels)} documents ({n_ad} adtracker); "
        f"rules parsed {ruleset.rule_count}, skipped {dict(ruleset.skip_report) or 0}"
    )
    return 0


def cmd_train(args) -> int:
    vectors = _load_feature_files(args.features)
    labels = pipeline_mod.read_labels_file(Path(args.labels).read_bytes())
    keys = sorted(k for k in vectors if k in labels)
    if not keys:
        raise DataError("no documents appear in both features and labels")
    if args.train_frac is not None:
        keys, _ = pipeline_mod.split_keys(keys, args.train_frac, args.split_seed)
        keys = sorted(keys)
    X = np.vstack([vectors[k] for k in keys])
    y = np.array([pipeline_mod.CLASS_NAMES.index(labels[k].label) for k in keys])
    params = forest_mod.ForestParams(
        n_trees=args.trees, mtry=args.mtry, max_depth=args.max_depth, seed=args.seed
    )
    model = forest_mod.train(X, y, params)
    Path(args.out).write_bytes(forest_mod.save_model(model))
    print(f"trained {args.trees} trees on {len(keys)} documents ({X.shape[1]} features)")
    return 0


def cmd_predict(args) -> int:
    model = forest_mod.load_model(Path(args.model).read_bytes())
    vectors = _load_feature_files(args.features)
    rows = []
    for (host, kind) in sorted(vectors):
        pred, score = forest_mod.predict(model, vectors[(host, kind)])
        rows.append((host, kind, pred, score, "full"))
    Path(args.out).write_bytes(pipeline_mod.write_scores_file(rows))
    print(f"scored {len(rows)} documents")
    return 0


def cmd_evaluate(args) -> int:
    graph = load_graph(Path(args.graph).read_bytes())
    predictions = pipeline_mod.read_scores_file(Path(args.scores).read_bytes())
    labels = pipeline_mod.read_labels_file(Path(args.labels).read_bytes())
    overrides = (
        parse_overrides(Path(args.overrides).read_text(encoding="utf-8"))
        if args.overrides
        else None
    )
    eligible, _ = pipeline_mod.filter_eligible(graph, args.min_in_degree)
    _, test_docs = pipeline_mod.split_documents(
        eligible, fraction=args.train_frac, seed=args.split_seed
    )
    modes = ("biased", "unbiased") if args.mode == "both" else (args.mode,)
    out = {}
    for mode in modes:
        report = pipeline_mod.evaluate_predictions(
            predictions, test_docs, labels, mode, weight_by=args.weight_by
        )
        out[mode] = report.to_dict()
        print(report.to_text())
        if overrides:
            corrected = pipeline_mod.evaluate_predictions(
                predictions, test_docs, labels, mode, overrides, args.weight_by
            )
            out[f"corrected_{mode}"] = corrected.to_dict()
            print()
            print(corrected.to_text())
        print()
    if args.out:
        Path(args.out).write_text(
            json.dumps(out, indent=2, sort_keys=True), encoding="utf-8"
        )
    return 0


def cmd_emit_rules(args) -> int:
    graph = load_graph(Path(args.graph).read_bytes())
    predictions = pipeline_mod.read_scores_file(Path(args.scores).read_bytes())
    ruleset = _read_rules(args.rules)
    docs = {(d.host, d.kind): d for d in graph.documents()}
    scored = [
        (docs[key], pred, score)
        for key, (pred, score) in sorted(predictions.items())
        if key in docs
    ]
    text = pipeline_mod.emit_candidate_rules(graph, scored, ruleset)
    Path(args.out).write_text(text, encoding="utf-8")
    n_rules = sum(1 for line in text.splitlines() if line.startswith("||"))
    print(f"emitted {n_rules} candidate rules")
    return 0


def cmd_synth(args) -> int:
    values = {}
    if args.config:
        for lineno, raw in enumerate(Path(args.config).read_text().splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"bad synth config line {lineno}: {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    config = EcosystemConfig(
        n_sites=int(values.get("n_sites", args.sites)),
        n_trackers=int(values.get("n_trackers", args.trackers)),
        n_benign=int(values.get("n_benign", args.benign)),
        tracker_embed_prob=float(
            values.get("tracker_embed_prob", args.tracker_embed_prob)
        ),
        benign_embed_prob=float(values.get("benign_embed_prob", args.benign_embed_prob)),
        bounce_prob=float(values.get("bounce_prob", args.bounce_prob)),
        seed=int(values.get("seed", args.seed)),
    )
    corpus = generate(config)
    paths = corpus.write(args.out_dir)
    print(
        f"generated {len(corpus.har_files)} HAR files under {paths['har_dir']}, "
        f"{len(corpus.truth_rules)} truth rules"
    )
    return 0


def cmd_run_all(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    summary = pipeline_mod.run_all(cfg)
    for name, report in summary["reports"].items():
        print(f"{name}: accuracy {report['accuracy']:.4f}")
    print(f"outputs under {cfg.out_dir}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="widetrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse a directory of HAR files into trees")
    p.add_argument("--har-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    graph = sub.add_parser("graph", help="build or inspect the merged graph")
    gsub = graph.add_subparsers(dest="graph_command", required=True, parser_class=_Parser)
    p = gsub.add_parser("build")
    p.add_argument("--trees", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph_build)
    p = gsub.add_parser("stats")
    p.add_argument("--graph", required=True)
    p.set_defaults(func=cmd_graph_stats)

    feats = sub.add_parser("features", help="extract feature matrices")
    fsub = feats.add_subparsers(dest="features_command", required=True, parser_class=_Parser)
    p = fsub.add_parser("structural")
    p.add_argument("--graph", required=True)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--prune", type=float, default=0.95)
    p.add_argument("--directed", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features_structural)
    p = fsub.add_parser("content")
    p.add_argument("--graph", required=True)
    p.add_argument("--vocab-size", type=int, default=1000)
    p.add_argument("--rank", choices=("df", "tf"), default="df")
    p.add_argument("--clamp-idf", action="store_true")
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=13)
    p.add_argument("--min-in-degree", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-out")
    p.set_defaults(func=cmd_features_content)

    p = sub.add_parser("label", help="label documents with filter lists")
    p.add_argument("--graph", required=True)
    p.add_argument("--rules", nargs="+", required=True)
    p.add_argument("--overrides")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train the random forest")
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--trees", type=int, default=250)
    p.add_argument("--mtry", type=int)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--seed", type=int, default=29)
    p.add_argument("--train-frac", type=float, help="train on this split only")
    p.add_argument("--split-seed", type=int, default=13)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score documents with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics over the held-out split")
    p.add_argument("--graph", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--overrides")
    p.add_argument("--mode", choices=("biased", "unbiased", "both"), default="both")
    p.add_argument("--weight-by", choices=("sites", "urls"), default="sites")
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=13)
    p.add_argument("--min-in-degree", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("emit-rules", help="candidate rules for unblocked predictions")
    p.add_argument("--graph", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--rules", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emit_rules)

    p = sub.add_parser("synth", help="generate a synthetic HAR corpus with truth")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sites", type=int, default=200)
    p.add_argument("--trackers", type=int, default=90)
    p.add_argument("--benign", type=int, default=60)
    p.add_argument("--tracker-embed-prob", type=float, default=0.35)
    p.add_argument("--benign-embed-prob", type=float, default=0.05)
    p.add_argument("--bounce-prob", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run-all", help="end-to-end pipeline from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        DataError,
        HarParseError,
        GraphError,
        forest_mod.ForestError,
        content_mod.VocabularyError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
