"""End-to-end orchestration: eligibility filtering, train/test splitting,
biased/unbiased/corrected metrics, reports, and candidate-rule emission.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import content as content_mod
from . import forest as forest_mod
from . import structural as structural_mod
from .filters import (
    ADTRACKER,
    BENIGN,
    Label,
    RuleSet,
    document_block_matched,
    label_document,
    parse_overrides,
    parse_rules,
)
from .graph import (
    SubdomainDocument,
    WideGraph,
    build_widegraph,
    coverage_counts,
    save_graph,
)
from .ingest import build_tree, parse_har, write_trees

CLASS_NAMES = (BENIGN, ADTRACKER)


class DataError(Exception):
    """Input data is unusable; distinct from usage errors for exit codes."""


def filter_eligible(
    graph: WideGraph, min_in_degree: int = 3
) -> tuple[list[SubdomainDocument], dict]:
    """Documents whose parent node has at least ``min_in_degree`` distinct
    in-edges, plus a (total, removed, kept) report."""
    in_deg: Counter = Counter()
    for (_, dst, _) in graph.edges:
        in_deg[dst] += 1
    docs = graph.documents()
    kept = [d for d in docs if in_deg[d.parent] >= min_in_degree]
    report = {"total": len(docs), "kept": len(kept), "removed": len(docs) - len(kept)}
    return kept, report


def split_keys(
    keys: list[tuple[str, str]], fraction: float = 0.8, seed: int = 13
) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """Deterministic shuffle; the first ceil(fraction * n) go to train."""
    if not 0.0 < fraction < 1.0:
        raise DataError("train fraction must be in (0, 1)")
    if len(keys) < 2:
        raise DataError("need at least 2 documents to split")
    ordered = sorted(keys)
    random.Random(seed).shuffle(ordered)
    n_train = math.ceil(fraction * len(ordered))
    return ordered[:n_train], ordered[n_train:]


def split_documents(
    docs: list[SubdomainDocument],
    fraction: float = 0.8,
    seed: int = 13,
    stratified: bool = False,
    labels: dict[tuple[str, str], Label] | None = None,
) -> tuple[list[SubdomainDocument], list[SubdomainDocument]]:
    by_key = {(d.host, d.kind): d for d in docs}
    if not stratified:
        train_keys, test_keys = split_keys(list(by_key), fraction, seed)
        return [by_key[k] for k in train_keys], [by_key[k] for k in test_keys]
    if labels is None:
        raise DataError("stratified split needs labels")
    train: list[SubdomainDocument] = []
    test: list[SubdomainDocument] = []
    for cls in CLASS_NAMES:
        group = [k for k in by_key if labels[k].label == cls]
        if len(group) == 1:
            train.append(by_key[group[0]])
        elif group:
            tr, te = split_keys(group, fraction, seed)
            train.extend(by_key[k] for k in tr)
            test.extend(by_key[k] for k in te)
    return train, test


@dataclass
class MetricsReport:
    mode: str  # "biased" or "unbiased"
    corrected: bool
    confusion: dict[str, dict[str, float]]  # confusion[true][pred] = weight
    precision: dict[str, float]
    recall: dict[str, float]
    macro_precision: float
    macro_recall: float
    accuracy: float
    total_weight: float

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "corrected": self.corrected,
            "confusion": self.confusion,
            "precision": self.precision,
            "recall": self.recall,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "accuracy": self.accuracy,
            "total_weight": self.total_weight,
        }

    def to_text(self) -> str:
        title = f"{self.mode} metrics" + (" (corrected)" if self.corrected else "")
        lines = [title, "-" * len(title)]
        lines.append(f"{'class':<12} {'precision':>10} {'recall':>10}")
        for cls in (ADTRACKER, BENIGN):
            lines.append(
                f"{cls:<12} {self.precision[cls]:>10.4f} {self.recall[cls]:>10.4f}"
            )
        lines.append(
            f"{'macro avg':<12} {self.macro_precision:>10.4f} {self.macro_recall:>10.4f}"
        )
        lines.append(f"accuracy     {self.accuracy:.4f}  (weight {self.total_weight:g})")
        return "\n".join(lines)


def compute_metrics(
    rows: list[tuple[str, str, float]], mode: str, corrected: bool
) -> MetricsReport:
    """Weighted confusion metrics over (true, predicted, weight) rows."""
    confusion = {t: {p: 0.0 for p in CLASS_NAMES} for t in CLASS_NAMES}
    for truth, pred, weight in rows:
        confusion[truth][pred] += weight
    total = sum(sum(row.values()) for row in confusion.values())
    precision = {}
    recall = {}
    for cls in CLASS_NAMES:
        predicted = sum(confusion[t][cls] for t in CLASS_NAMES)
        actual = sum(confusion[cls].values())
        precision[cls] = confusion[cls][cls] / predicted if predicted else 0.0
        recall[cls] = confusion[cls][cls] / actual if actual else 0.0
    diagonal = sum(confusion[c][c] for c in CLASS_NAMES)
    return MetricsReport(
        mode=mode,
        corrected=corrected,
        confusion=confusion,
        precision=precision,
        recall=recall,
        macro_precision=sum(precision.values()) / len(CLASS_NAMES),
        macro_recall=sum(recall.values()) / len(CLASS_NAMES),
        accuracy=diagonal / total if total else 0.0,
        total_weight=total,
    )


def evaluate_predictions(
    predictions: dict[tuple[str, str], tuple[int, float]],
    test_docs: list[SubdomainDocument],
    labels: dict[tuple[str, str], Label],
    mode: str = "unbiased",
    overrides: dict[str, str] | None = None,
    weight_by: str = "sites",
) -> MetricsReport:
    """Weighted metrics over already-computed predictions.

    Biased mode weights each document by how many first parties reached it
    (or by raw URL count with ``weight_by="urls"``); unbiased gives every
    document weight 1. Overrides re-label before scoring (corrected report).
    """
    if mode not in ("biased", "unbiased"):
        raise DataError(f"unknown metrics mode {mode!r}")
    if weight_by not in ("sites", "urls"):
        raise DataError(f"unknown weighting {weight_by!r}")
    rows = []
    for doc in test_docs:
        key = (doc.host, doc.kind)
        if key not in labels:
            raise DataError(f"document {doc.host} ({doc.kind}) has no label")
        if key not in predictions:
            raise DataError(f"document {doc.host} ({doc.kind}) has no prediction")
        pred, _ = predictions[key]
        truth = labels[key].label
        if overrides and doc.host in overrides:
            truth = overrides[doc.host]
        if mode == "unbiased":
            weight = 1.0
        elif weight_by == "sites":
            weight = float(len(doc.sites))
        else:
            weight = float(sum(doc.urls.values()))
        rows.append((truth, CLASS_NAMES[pred], weight))
    return compute_metrics(rows, mode, corrected=overrides is not None)


def evaluate(
    model: forest_mod.ForestModel,
    test_docs: list[SubdomainDocument],
    vectors: dict[tuple[str, str], np.ndarray],
    labels: dict[tuple[str, str], Label],
    mode: str = "unbiased",
    overrides: dict[str, str] | None = None,
    weight_by: str = "sites",
) -> MetricsReport:
    """Score the model on test documents; see evaluate_predictions."""
    predictions = {}
    for doc in test_docs:
        key = (doc.host, doc.kind)
        if key not in vectors:
            raise DataError(f"document {doc.host} ({doc.kind}) has no feature vector")
        predictions[key] = forest_mod.predict(model, vectors[key])
    return evaluate_predictions(
        predictions, test_docs, labels, mode, overrides, weight_by
    )


def emit_candidate_rules(
    graph: WideGraph,
    scored: list[tuple[SubdomainDocument, int, float]],
    rules: RuleSet,
) -> str:
    """Block-rule lines for predicted AdTrackers the lists do not yet hit."""
    selected = []
    for doc, pred, score in scored:
        if pred != 1:
            continue
        if document_block_matched(rules, doc):
            continue
        d, i, n = coverage_counts(graph, doc.parent)
        selected.append((score, doc.host, d / n if n else 0.0, i / n if n else 0.0))
    selected.sort(key=lambda s: (-s[0], s[1]))
    lines = [
        "! widetrack candidate rules",
        f"! {len(selected)} candidate(s), sorted by model score",
    ]
    for score, host, direct, indirect in selected:
        lines.append(
            f"! score={score:.4f} direct_coverage={direct:.4f} indirect_coverage={indirect:.4f}"
        )
        lines.append(f"||{host}^")
    return "\n".join(lines) + "\n"


_DEGREE_BUCKETS = ((1, 1), (2, 3), (4, 7), (8, 15), (16, 31), (32, 63), (64, None))


def analysis_tables(
    graph: WideGraph,
    docs: list[SubdomainDocument],
    labels: dict[tuple[str, str], Label],
    vocabulary: content_mod.Vocabulary | None = None,
    top_terms: int = 20,
) -> dict:
    """Degree-bucket class mix, coverage CCDF points, keyword rates."""
    degree: Counter = Counter()
    for (src, dst, _) in graph.edges:
        degree[src] += 1
        degree[dst] += 1

    def bucket_name(lo, hi):
        return f"{lo}+" if hi is None else (f"{lo}" if lo == hi else f"{lo}-{hi}")

    buckets = []
    for lo, hi in _DEGREE_BUCKETS:
        n_ad = n_benign = 0
        for doc in docs:
            deg = degree[doc.parent]
            if deg >= lo and (hi is None or deg <= hi):
                if labels[(doc.host, doc.kind)].label == ADTRACKER:
                    n_ad += 1
                else:
                    n_benign += 1
        total = n_ad + n_benign
        buckets.append(
            {
                "bucket": bucket_name(lo, hi),
                "adtracker": n_ad,
                "benign": n_benign,
                "adtracker_share": n_ad / total if total else 0.0,
            }
        )

    ccdf = {}
    for cls in CLASS_NAMES:
        values = sorted(
            coverage_counts(graph, doc.parent)[0] / len(graph.roots)
            for doc in docs
            if labels[(doc.host, doc.kind)].label == cls
        )
        points = []
        n = len(values)
        for v in sorted(set(values)):
            above = sum(1 for x in values if x >= v)
            points.append({"coverage": v, "ccdf": above / n})
        ccdf[cls] = points

    keywords = []
    if vocabulary is not None:
        by_class = {cls: [] for cls in CLASS_NAMES}
        for doc in docs:
            tokens = set(content_mod.doc_token_counts(doc))
            by_class[labels[(doc.host, doc.kind)].label].append(tokens)
        for term in vocabulary.terms[:top_terms]:
            rates = {
                cls: (
                    sum(1 for toks in group if term in toks) / len(group)
                    if group
                    else 0.0
                )
                for cls, group in by_class.items()
            }
            keywords.append({"term": term, **rates})

    return {"degree_buckets": buckets, "direct_coverage_ccdf": ccdf, "top_keywords": keywords}


# --- flat-file interfaces shared by the CLI subcommands ---


def write_labels_file(labels: dict[tuple[str, str], Label]) -> bytes:
    lines = ["host\tkind\tlabel\tsource"]
    for (host, kind) in sorted(labels):
        lab = labels[(host, kind)]
        lines.append(f"{host}\t{kind}\t{lab.label}\t{lab.source}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_labels_file(data: bytes) -> dict[tuple[str, str], Label]:
    lines = data.decode("utf-8").splitlines()
    if not lines or lines[0] != "host\tkind\tlabel\tsource":
        raise DataError("unrecognized labels file header")
    out = {}
    for line in lines[1:]:
        if not line:
            continue
        host, kind, label, source = line.split("\t")
        if label not in CLASS_NAMES:
            raise DataError(f"unknown label {label!r} for {host}")
        out[(host, kind)] = Label(label, source)
    return out


def write_scores_file(rows: list[tuple[str, str, int, float, str]]) -> bytes:
    lines = ["host\tkind\tprediction\tscore\tbasis"]
    for host, kind, pred, score, basis in sorted(rows):
        lines.append(f"{host}\t{kind}\t{CLASS_NAMES[pred]}\t{score!r}\t{basis}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_scores_file(data: bytes) -> dict[tuple[str, str], tuple[int, float]]:
    lines = data.decode("utf-8").splitlines()
    if not lines or lines[0] != "host\tkind\tprediction\tscore\tbasis":
        raise DataError("unrecognized scores file header")
    out = {}
    for line in lines[1:]:
        if not line:
            continue
        host, kind, pred, score, _ = line.split("\t")
        out[(host, kind)] = (CLASS_NAMES.index(pred), float(score))
    return out


def write_content_matrix(
    docs: list[SubdomainDocument],
    vocabulary: content_mod.Vocabulary,
    clamp_idf: bool = False,
) -> bytes:
    columns = [f"kw:{t}" for t in vocabulary.terms] + list(
        content_mod.ENGINEERED_COLUMNS
    )
    lines = ["\t".join(["host", "kind"] + columns)]
    for doc in sorted(docs, key=lambda d: (d.host, d.kind)):
        kw = content_mod.keyword_scores(doc, vocabulary, clamp_idf=clamp_idf)
        eng = content_mod.engineered(doc)
        cells = (
            [doc.host, doc.kind]
            + [repr(float(v)) for v in kw]
            + [repr(float(v)) for v in eng]
        )
        lines.append("\t".join(cells))
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_content_matrix(data: bytes):
    """Returns (keys, columns, values) from a content feature table."""
    lines = data.decode("utf-8").splitlines()
    if not lines:
        raise DataError("empty content matrix")
    header = lines[0].split("\t")
    if header[:2] != ["host", "kind"]:
        raise DataError("unrecognized content matrix header")
    keys = []
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split("\t")
        keys.append((cells[0], cells[1]))
        rows.append([float(c) for c in cells[2:]])
    values = np.array(rows) if rows else np.zeros((0, len(header) - 2))
    return keys, header[2:], values


# --- configuration and the full run ---

_CONFIG_DEFAULTS = {
    "har_dir": "",
    "rules_files": "",
    "overrides_file": "",
    "out_dir": "out",
    "vocab_size": 1000,
    "vocab_rank": "df",
    "clamp_idf": False,
    "refex_depth": 2,
    "prune_threshold": 0.95,
    "directed_neighbors": False,
    "n_trees": 250,
    "mtry": None,
    "max_depth": None,
    "forest_seed": 29,
    "train_frac": 0.8,
    "split_seed": 13,
    "stratified": False,
    "min_in_degree": 3,
    "weight_by": "sites",
}


@dataclass
class PipelineConfig:
    har_dir: Path
    rules_files: list[Path]
    out_dir: Path
    overrides_file: Path | None = None
    vocab_size: int = 1000
    vocab_rank: str = "df"
    clamp_idf: bool = False
    refex_depth: int = 2
    prune_threshold: float = 0.95
    directed_neighbors: bool = False
    n_trees: int = 250
    mtry: int | None = None
    max_depth: int | None = None
    forest_seed: int = 29
    train_frac: float = 0.8
    split_seed: int = 13
    stratified: bool = False
    min_in_degree: int = 3
    weight_by: str = "sites"

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        values = dict(_CONFIG_DEFAULTS)
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"bad config line {lineno}: {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in values:
                raise DataError(f"unknown config key {key!r}")
            values[key] = value
        return cls(
            har_dir=Path(values["har_dir"]),
            rules_files=[Path(p) for p in str(values["rules_files"]).split() if p],
            out_dir=Path(values["out_dir"]),
            overrides_file=Path(values["overrides_file"])
            if values["overrides_file"]
            else None,
            vocab_size=int(values["vocab_size"]),
            vocab_rank=str(values["vocab_rank"]),
            clamp_idf=_to_bool(values["clamp_idf"]),
            refex_depth=int(values["refex_depth"]),
            prune_threshold=float(values["prune_threshold"]),
            directed_neighbors=_to_bool(values["directed_neighbors"]),
            n_trees=int(values["n_trees"]),
            mtry=_to_optional_int(values["mtry"]),
            max_depth=_to_optional_int(values["max_depth"]),
            forest_seed=int(values["forest_seed"]),
            train_frac=float(values["train_frac"]),
            split_seed=int(values["split_seed"]),
            stratified=_to_bool(values["stratified"]),
            min_in_degree=int(values["min_in_degree"]),
            weight_by=str(values["weight_by"]),
        )


def _to_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _to_optional_int(value):
    if value in (None, "", "None", "none"):
        return None
    return int(value)


def ingest_har_dir(har_dir: str | Path):
    """Parse every *.har under the directory into dependency trees."""
    paths = sorted(Path(har_dir).glob("*.har"))
    if not paths:
        raise DataError(f"no .har files under {har_dir}")
    trees = []
    skip_total: Counter = Counter()
    for path in paths:
        record = parse_har(path.read_bytes())
        skip_total.update(record.skipped)
        trees.append(build_tree(record))
    return trees, skip_total


def assemble_all_vectors(
    docs: list[SubdomainDocument],
    vocabulary: content_mod.Vocabulary,
    struct_matrix: structural_mod.StructMatrix,
    clamp_idf: bool = False,
) -> dict[tuple[str, str], np.ndarray]:
    return {
        (doc.host, doc.kind): content_mod.assemble_vector(
            doc, vocabulary, struct_matrix.row(doc.parent), clamp_idf=clamp_idf
        )
        for doc in docs
    }


def run_all(cfg: PipelineConfig) -> dict:
    """Full run: ingest -> graph -> features -> label -> train -> report."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    trees, skip_total = ingest_har_dir(cfg.har_dir)
    (out / "trees.jsonl").write_bytes(write_trees(trees))
    graph = build_widegraph(trees)
    (out / "graph.jsonl").write_bytes(save_graph(graph))

    struct = structural_mod.refex_expand(
        structural_mod.build_base_matrix(graph),
        graph,
        depth=cfg.refex_depth,
        threshold=cfg.prune_threshold,
        directed=cfg.directed_neighbors,
    )
    (out / "structural.tsv").write_bytes(structural_mod.save_struct_matrix(struct))

    eligible, elig_report = filter_eligible(graph, cfg.min_in_degree)
    if len(eligible) < 2:
        raise DataError("fewer than 2 eligible documents; nothing to learn from")

    rules_text = "\n".join(
        Path(p).read_text(encoding="utf-8") for p in cfg.rules_files
    )
    ruleset = parse_rules(rules_text)
    overrides = (
        parse_overrides(Path(cfg.overrides_file).read_text(encoding="utf-8"))
        if cfg.overrides_file
        else None
    )
    labels = {
        (doc.host, doc.kind): label_document(ruleset, doc) for doc in eligible
    }
    (out / "labels.tsv").write_bytes(write_labels_file(labels))

    train_docs, test_docs = split_documents(
        eligible,
        fraction=cfg.train_frac,
        seed=cfg.split_seed,
        stratified=cfg.stratified,
        labels=labels,
    )

    vocabulary = content_mod.build_vocabulary(
        train_docs, k=cfg.vocab_size, rank_by=cfg.vocab_rank
    )
    (out / "vocabulary.tsv").write_bytes(content_mod.save_vocabulary(vocabulary))
    (out / "content.tsv").write_bytes(
        write_content_matrix(eligible, vocabulary, clamp_idf=cfg.clamp_idf)
    )
    vectors = assemble_all_vectors(eligible, vocabulary, struct, cfg.clamp_idf)

    X_train = np.vstack([vectors[(d.host, d.kind)] for d in train_docs])
    y_train = np.array(
        [CLASS_NAMES.index(labels[(d.host, d.kind)].label) for d in train_docs]
    )
    params = forest_mod.ForestParams(
        n_trees=cfg.n_trees,
        mtry=cfg.mtry,
        max_depth=cfg.max_depth,
        seed=cfg.forest_seed,
    )
    try:
        model = forest_mod.train(X_train, y_train, params)
    except forest_mod.ForestError as exc:
        raise DataError(str(exc)) from exc
    (out / "model.txt").write_bytes(forest_mod.save_model(model))

    # Training rows are scored out-of-bag: a fully grown forest memorizes its
    # training labels, which would mask any list-label disagreement there and
    # hide exactly the unlisted trackers candidate emission exists to find.
    oob_labels, oob_scores = forest_mod.oob_predict(model, X_train)
    oob_by_key = {
        (d.host, d.kind): (int(oob_labels[i]), float(oob_scores[i]))
        for i, d in enumerate(train_docs)
    }
    score_rows = []
    scored_docs = []
    for doc in eligible:
        key = (doc.host, doc.kind)
        if key in oob_by_key:
            pred, score = oob_by_key[key]
            basis = "oob"
        else:
            pred, score = forest_mod.predict(model, vectors[key])
            basis = "full"
        score_rows.append((doc.host, doc.kind, pred, score, basis))
        scored_docs.append((doc, pred, score))
    (out / "scores.tsv").write_bytes(write_scores_file(score_rows))

    reports = {
        "unbiased": evaluate(model, test_docs, vectors, labels, "unbiased"),
        "biased": evaluate(
            model, test_docs, vectors, labels, "biased", weight_by=cfg.weight_by
        ),
    }
    if overrides:
        reports["corrected_unbiased"] = evaluate(
            model, test_docs, vectors, labels, "unbiased", overrides=overrides
        )
        reports["corrected_biased"] = evaluate(
            model,
            test_docs,
            vectors,
            labels,
            "biased",
            overrides=overrides,
            weight_by=cfg.weight_by,
        )

    candidates = emit_candidate_rules(graph, scored_docs, ruleset)
    (out / "candidate-rules.txt").write_text(candidates, encoding="utf-8")

    names = content_mod.feature_names(vocabulary, struct.columns)
    importance = [
        {"feature": names[f], "importance": imp}
        for f, imp in forest_mod.feature_importance(model)[:25]
    ]
    summary = {
        "sites": len(trees),
        "ingest_skips": dict(sorted(skip_total.items())),
        "eligibility": elig_report,
        "split": {"train": len(train_docs), "test": len(test_docs)},
        "rules": {
            "parsed": ruleset.rule_count,
            "skipped": dict(sorted(ruleset.skip_report.items())),
        },
        "label_counts": dict(
            Counter(lab.label for lab in labels.values()).most_common()
        ),
        "reports": {name: rep.to_dict() for name, rep in reports.items()},
        "feature_importance": importance,
        "analysis": analysis_tables(graph, eligible, labels, vocabulary),
    }
    (out / "report.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8"
    )
    text = "\n\n".join(rep.to_text() for rep in reports.values())
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    return summary
