"""Random forest built from scratch: bootstrap sampling, Gini splits over a
random feature subset at each node, majority vote over trees.

Per-tree randomness comes from independent streams seeded by (seed, tree
index), so trees could be trained in any order or in parallel without
changing the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CLASSES = ("benign", "adtracker")


class ForestError(ValueError):
    pass


class ForestFormatError(ForestError):
    """Raised when a persisted model cannot be decoded."""


@dataclass
class ForestParams:
    n_trees: int = 250
    mtry: int | None = None  # default ceil(sqrt(d))
    max_depth: int | None = None
    min_samples_split: int = 2
    seed: int = 0

    def resolve_mtry(self, d: int) -> int:
        mtry = self.mtry if self.mtry is not None else math.ceil(math.sqrt(d))
        if not 1 <= mtry <= d:
            raise ForestError(f"mtry must be in [1, {d}], got {mtry}")
        return mtry

    def validate(self):
        if self.n_trees < 1:
            raise ForestError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ForestError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ForestError("max_depth must be >= 0")


@dataclass
class Tree:
    """Nodes in pre-order. feature[i] == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, 2) class counts from the bootstrap sample

    def predict_one(self, x: np.ndarray) -> int:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i]
        c0, c1 = self.counts[i]
        return 1 if c1 > c0 else 0


@dataclass
class ForestModel:
    trees: list[Tree]
    feature_count: int
    params: ForestParams
    classes: tuple[str, str] = CLASSES
    in_bag: list[np.ndarray] = field(default_factory=list, repr=False)  # not persisted


def _gini(c0: float, c1: float) -> float:
    n = c0 + c1
    if n == 0:
        return 0.0
    return 1.0 - (c0 * c0 + c1 * c1) / (n * n)


def _best_split(X: np.ndarray, y: np.ndarray, idx: np.ndarray, feats: np.ndarray):
    """Lowest weighted-Gini (feature, threshold) over candidate midpoints.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    n = len(idx)
    y_node = y[idx]
    c1 = int(y_node.sum())
    c0 = n - c1
    best_impurity = None
    best = None
    for f in feats:
        x = X[idx, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        if xs[0] == xs[-1]:
            continue
        cum1 = np.cumsum(y_node[order])
        pos = np.nonzero(xs[:-1] < xs[1:])[0]
        ln = pos + 1.0
        l1 = cum1[pos].astype(float)
        l0 = ln - l1
        rn = n - ln
        r1 = c1 - l1
        r0 = rn - r1
        gl = 1.0 - (l0 * l0 + l1 * l1) / (ln * ln)
        gr = 1.0 - (r0 * r0 + r1 * r1) / (rn * rn)
        weighted = (ln * gl + rn * gr) / n
        k = int(np.argmin(weighted))
        if best_impurity is None or weighted[k] < best_impurity:
            best_impurity = float(weighted[k])
            best = (int(f), float((xs[pos[k]] + xs[pos[k] + 1]) / 2.0))
    if best is None:
        return None
    if best_impurity >= _gini(c0, c1) - 1e-12:
        return None  # no improving split
    return best_impurity, best[0], best[1]


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    sample: np.ndarray,
    params: ForestParams,
    mtry: int,
    rng: np.random.Generator,
) -> Tree:
    d = X.shape[1]
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[tuple[int, int]] = []

    # Explicit pre-order construction; (indices, depth, parent, is_left).
    stack = [(sample, 0, -1, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            if is_left:
                left[parent] = node
            else:
                right[parent] = node
        c1 = int(y[idx].sum())
        c0 = len(idx) - c1
        counts.append((c0, c1))
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)

        if (
            c0 == 0
            or c1 == 0
            or len(idx) < params.min_samples_split
            or (params.max_depth is not None and depth >= params.max_depth)
        ):
            continue
        feats = np.sort(rng.choice(d, size=mtry, replace=False))
        found = _best_split(X, y, idx, feats)
        if found is None:
            continue
        _, f, thr = found
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        # Push right first so the left subtree is emitted next (pre-order).
        stack.append((idx[~go_left], depth + 1, node, False))
        stack.append((idx[go_left], depth + 1, node, True))

    return Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        counts=np.array(counts, dtype=np.int64),
    )


def _validate_training_data(X: np.ndarray, y: np.ndarray):
    if X.ndim != 2:
        raise ForestError("X must be a 2-D matrix")
    if len(X) != len(y):
        raise ForestError("X and y length mismatch")
    if len(X) < 2:
        raise ForestError("need at least 2 training rows")
    bad = np.argwhere(~np.isfinite(X))
    if len(bad):
        r, c = bad[0]
        raise ForestError(f"non-finite feature value at row {r}, column {c}")
    present = set(np.unique(y).tolist())
    if not present <= {0, 1}:
        raise ForestError(f"labels must be 0/1, got {sorted(present)}")
    if len(present) < 2:
        raise ForestError("training data contains a single class")


def train(X, y, params: ForestParams | None = None) -> ForestModel:
    params = params or ForestParams()
    params.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _validate_training_data(X, y)
    n, d = X.shape
    mtry = params.resolve_mtry(d)

    trees = []
    in_bag = []
    for t in range(params.n_trees):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=params.seed, spawn_key=(t,))
        )
        sample = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X, y, sample, params, mtry, rng))
        in_bag.append(sample)
    return ForestModel(
        trees=trees, feature_count=d, params=params, in_bag=in_bag
    )


def predict(model: ForestModel, vector) -> tuple[int, float]:
    """(majority label, fraction of trees voting adtracker).

    An exact tie votes benign: blocking should not ride on a coin flip.
    """
    x = np.asarray(vector, dtype=np.float64)
    if x.shape != (model.feature_count,):
        raise ForestError(
            f"expected {model.feature_count} features, got {x.shape}"
        )
    votes = sum(tree.predict_one(x) for tree in model.trees)
    score = votes / len(model.trees)
    return (1 if score > 0.5 else 0, score)


def predict_many(model: ForestModel, X) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    labels = np.zeros(len(X), dtype=np.int64)
    scores = np.zeros(len(X))
    for i, x in enumerate(X):
        labels[i], scores[i] = predict(model, x)
    return labels, scores


def oob_predict(model: ForestModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-bag vote per training row.

    Rows must align with the matrix the model was trained on. Each row is
    scored only by trees whose bootstrap missed it, which estimates how the
    forest generalizes to that point instead of echoing its training label.
    Rows every tree saw (vanishingly rare with many trees) fall back to the
    full-forest vote.
    """
    if not model.in_bag:
        raise ForestError("model carries no bootstrap record (loaded from file?)")
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if n != len(model.in_bag[0]):
        raise ForestError(
            f"out-of-bag scoring needs the training matrix: got {n} rows, "
            f"trained on {len(model.in_bag[0])}"
        )
    votes = np.zeros(n)
    counts = np.zeros(n)
    for t, tree in enumerate(model.trees):
        seen = np.zeros(n, dtype=bool)
        seen[model.in_bag[t]] = True
        for r in np.nonzero(~seen)[0]:
            votes[r] += tree.predict_one(X[r])
            counts[r] += 1
    scores = np.zeros(n)
    for r in range(n):
        if counts[r] > 0:
            scores[r] = votes[r] / counts[r]
        else:
            _, scores[r] = predict(model, X[r])
    labels = (scores > 0.5).astype(np.int64)
    return labels, scores


def feature_importance(model: ForestModel) -> list[tuple[int, float]]:
    """Mean impurity decrease per feature, normalized to sum 1."""
    totals = np.zeros(model.feature_count)
    for tree in model.trees:
        n_root = tree.counts[0].sum()
        for i in range(len(tree.feature)):
            f = tree.feature[i]
            if f < 0:
                continue
            c0, c1 = tree.counts[i]
            lc0, lc1 = tree.counts[tree.left[i]]
            rc0, rc1 = tree.counts[tree.right[i]]
            n = c0 + c1
            decrease = _gini(c0, c1) - (
                (lc0 + lc1) * _gini(lc0, lc1) + (rc0 + rc1) * _gini(rc0, rc1)
            ) / n
            totals[f] += (n / n_root) * decrease
    totals /= len(model.trees)
    total = totals.sum()
    if total > 0:
        totals = totals / total
    ranked = sorted(range(model.feature_count), key=lambda f: (-totals[f], f))
    return [(f, float(totals[f])) for f in ranked]


def save_model(model: ForestModel) -> bytes:
    """Versioned flat text: params, then each tree in pre-order."""
    p = model.params
    lines = [
        "widetrack-forest\tv1",
        "classes\t" + "\t".join(model.classes),
        f"feature_count\t{model.feature_count}",
        "params\tn_trees={}\tmtry={}\tmax_depth={}\tmin_samples_split={}\tseed={}".format(
            p.n_trees, p.mtry, p.max_depth, p.min_samples_split, p.seed
        ),
        f"trees\t{len(model.trees)}",
    ]
    for t, tree in enumerate(model.trees):
        lines.append(f"tree\t{t}\t{len(tree.feature)}")
        for i in range(len(tree.feature)):
            c0, c1 = tree.counts[i]
            if tree.feature[i] < 0:
                lines.append(f"l\t{c0}\t{c1}")
            else:
                lines.append(
                    f"n\t{tree.feature[i]}\t{float(tree.threshold[i])!r}\t{c0}\t{c1}"
                )
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_tree_nodes(lines: list[str], start: int, n_nodes: int) -> tuple[Tree, int]:
    feature = np.full(n_nodes, -1, dtype=np.int32)
    threshold = np.zeros(n_nodes, dtype=np.float64)
    left = np.full(n_nodes, -1, dtype=np.int32)
    right = np.full(n_nodes, -1, dtype=np.int32)
    counts = np.zeros((n_nodes, 2), dtype=np.int64)

    # Pre-order reconstruction: a stack of parents waiting for children.
    pending: list[tuple[int, bool]] = []
    for node in range(n_nodes):
        cells = lines[start + node].split("\t")
        if pending:
            parent, is_left = pending.pop()
            if is_left:
                left[parent] = node
            else:
                right[parent] = node
        elif node != 0:
            raise ForestFormatError("tree has trailing nodes")
        if cells[0] == "l":
            counts[node] = (int(cells[1]), int(cells[2]))
        elif cells[0] == "n":
            feature[node] = int(cells[1])
            threshold[node] = float(cells[2])
            counts[node] = (int(cells[3]), int(cells[4]))
            pending.append((node, False))
            pending.append((node, True))
        else:
            raise ForestFormatError(f"unknown node line {cells[0]!r}")
    if pending:
        raise ForestFormatError("tree is truncated")
    return (
        Tree(feature=feature, threshold=threshold, left=left, right=right, counts=counts),
        start + n_nodes,
    )


def load_model(data: bytes) -> ForestModel:
    try:
        lines = data.decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise ForestFormatError("model file is not UTF-8") from exc
    try:
        if lines[0] != "widetrack-forest\tv1":
            raise ForestFormatError("unrecognized model header")
        classes = tuple(lines[1].split("\t")[1:])
        feature_count = int(lines[2].split("\t")[1])
        raw_params = dict(
            item.split("=", 1) for item in lines[3].split("\t")[1:]
        )
        params = ForestParams(
            n_trees=int(raw_params["n_trees"]),
            mtry=None if raw_params["mtry"] == "None" else int(raw_params["mtry"]),
            max_depth=None
            if raw_params["max_depth"] == "None"
            else int(raw_params["max_depth"]),
            min_samples_split=int(raw_params["min_samples_split"]),
            seed=int(raw_params["seed"]),
        )
        n_trees = int(lines[4].split("\t")[1])
        trees = []
        cursor = 5
        for t in range(n_trees):
            head = lines[cursor].split("\t")
            if head[0] != "tree" or int(head[1]) != t:
                raise ForestFormatError(f"expected tree {t} header")
            tree, cursor = _parse_tree_nodes(lines, cursor + 1, int(head[2]))
            if (tree.feature >= feature_count).any():
                raise ForestFormatError("tree references unknown feature")
            trees.append(tree)
    except ForestFormatError:
        raise
    except (IndexError, KeyError, ValueError) as exc:
        raise ForestFormatError(f"corrupt model file: {exc}") from exc
    return ForestModel(
        trees=trees, feature_count=feature_count, params=params, classes=classes
    )
