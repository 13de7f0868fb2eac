"""Per-node structural features: base graph properties plus recursive
neighbor aggregates with correlation pruning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import GraphError, NodeKey, WideGraph, coverage

BASE_COLUMNS = (
    "degree",
    "in_degree",
    "out_degree",
    "ego_inter",
    "ego_out",
    "direct_cov",
    "indirect_cov",
)


@dataclass
class BaseFeatureRow:
    degree: int
    in_degree: int
    out_degree: int
    ego_inter: int
    ego_out: int
    direct_cov: float
    indirect_cov: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.degree,
                self.in_degree,
                self.out_degree,
                self.ego_inter,
                self.ego_out,
                self.direct_cov,
                self.indirect_cov,
            ],
            dtype=float,
        )


@dataclass
class StructMatrix:
    keys: list[NodeKey]
    columns: list[str]
    generations: list[int]
    values: np.ndarray  # shape (len(keys), len(columns))
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {key: i for i, key in enumerate(self.keys)}

    def row(self, key: NodeKey) -> np.ndarray:
        try:
            return self.values[self._index[key]]
        except KeyError:
            raise GraphError(f"no structural row for {key}") from None


class _Adjacency:
    """Distinct-edge views of the graph (multiplicity ignored)."""

    def __init__(self, graph: WideGraph):
        self.in_edges: dict[NodeKey, set] = {k: set() for k in graph.nodes}
        self.out_edges: dict[NodeKey, set] = {k: set() for k in graph.nodes}
        self.neighbors: dict[NodeKey, set] = {k: set() for k in graph.nodes}
        self.edge_keys = list(graph.edges)
        for src, dst, label in self.edge_keys:
            self.out_edges[src].add((src, dst, label))
            self.in_edges[dst].add((src, dst, label))
            self.neighbors[src].add(dst)
            self.neighbors[dst].add(src)


def base_features(graph: WideGraph, key: NodeKey, adj: _Adjacency | None = None) -> BaseFeatureRow:
    """Degrees, egonet edge counts, and coverages for one third-party node.

    The egonet is the node plus all neighbors ignoring direction; ego_inter
    counts directed edges inside it, ego_out those crossing its boundary.
    """
    if key not in graph.nodes:
        raise GraphError(f"unknown node {key}")
    if key.is_first_party():
        raise GraphError("structural features are defined for third parties only")
    adj = adj or _Adjacency(graph)
    in_deg = len(adj.in_edges[key])
    out_deg = len(adj.out_edges[key])
    ego = adj.neighbors[key] | {key}
    ego_inter = 0
    ego_out = 0
    for src, dst, _ in adj.edge_keys:
        inside = (src in ego) + (dst in ego)
        if inside == 2:
            ego_inter += 1
        elif inside == 1:
            ego_out += 1
    direct, indirect = coverage(graph, key)
    return BaseFeatureRow(
        degree=in_deg + out_deg,
        in_degree=in_deg,
        out_degree=out_deg,
        ego_inter=ego_inter,
        ego_out=ego_out,
        direct_cov=direct,
        indirect_cov=indirect,
    )


def build_base_matrix(graph: WideGraph) -> StructMatrix:
    keys = graph.third_party_keys()
    adj = _Adjacency(graph)
    rows = [base_features(graph, key, adj).as_array() for key in keys]
    values = np.vstack(rows) if rows else np.zeros((0, len(BASE_COLUMNS)))
    return StructMatrix(
        keys=keys,
        columns=list(BASE_COLUMNS),
        generations=[0] * len(BASE_COLUMNS),
        values=values,
    )


def _pairwise_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson r; constant-vs-constant counts as 1, constant-vs-varying as 0."""
    da = a - a.mean()
    db = b - b.mean()
    na = float(np.sqrt(np.dot(da, da)))
    nb = float(np.sqrt(np.dot(db, db)))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(da, db) / (na * nb), -1.0, 1.0))


def prune_correlated(matrix: StructMatrix, threshold: float) -> StructMatrix:
    """Drop columns highly correlated with an earlier-retained column.

    Columns are considered in generation-then-name order, so earlier
    generations and lexicographically-first names win ties.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("prune threshold must be in (0, 1]")
    order = sorted(
        range(len(matrix.columns)),
        key=lambda i: (matrix.generations[i], matrix.columns[i]),
    )
    retained: list[int] = []
    for i in order:
        col = matrix.values[:, i]
        if all(
            abs(_pairwise_correlation(col, matrix.values[:, j])) < threshold
            for j in retained
        ):
            retained.append(i)
    keep = sorted(retained)
    return StructMatrix(
        keys=matrix.keys,
        columns=[matrix.columns[i] for i in keep],
        generations=[matrix.generations[i] for i in keep],
        values=matrix.values[:, keep].copy(),
    )


def expand_level(
    matrix: StructMatrix, graph: WideGraph, generation: int, directed: bool = False
) -> StructMatrix:
    """Append mean/sum neighbor aggregates of every current column."""
    adj = _Adjacency(graph)
    row_set = set(matrix.keys)
    neighbor_rows = []
    for key in matrix.keys:
        if directed:
            near = {dst for (_, dst, _) in adj.out_edges[key]}
        else:
            near = adj.neighbors[key]
        neighbor_rows.append([matrix._index[n] for n in sorted(near & row_set)])

    n_rows, n_cols = matrix.values.shape
    means = np.zeros((n_rows, n_cols))
    sums = np.zeros((n_rows, n_cols))
    for r, hood in enumerate(neighbor_rows):
        if hood:
            block = matrix.values[hood, :]
            sums[r] = block.sum(axis=0)
            means[r] = block.mean(axis=0)

    columns = list(matrix.columns)
    generations = list(matrix.generations)
    blocks = [matrix.values]
    for agg, block in (("mean", means), ("sum", sums)):
        for c, name in enumerate(matrix.columns):
            columns.append(f"{agg}({name})")
            generations.append(generation)
            blocks.append(block[:, c : c + 1])
    return StructMatrix(
        keys=matrix.keys,
        columns=columns,
        generations=generations,
        values=np.hstack(blocks),
    )


def refex_expand(
    matrix: StructMatrix,
    graph: WideGraph,
    depth: int,
    threshold: float = 0.95,
    directed: bool = False,
) -> StructMatrix:
    """Recursively aggregate features over neighborhoods, pruning per level.

    Aggregation ignores edge direction and multiplicity unless ``directed``;
    only nodes that have matrix rows (third parties) contribute, since
    first-party adjacency is already captured by the coverage columns.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    for level in range(1, depth + 1):
        matrix = expand_level(matrix, graph, generation=level, directed=directed)
        matrix = prune_correlated(matrix, threshold)
    return matrix


def generation_of(column: str) -> int:
    """Recover a column's recursion level from its aggregate nesting."""
    gen = 0
    while column.startswith(("mean(", "sum(")):
        column = column.split("(", 1)[1][:-1]
        gen += 1
    return gen


def save_struct_matrix(matrix: StructMatrix) -> bytes:
    lines = ["\t".join(["domain", "kind"] + matrix.columns)]
    for i, key in enumerate(matrix.keys):
        cells = [key.domain, key.kind] + [repr(float(v)) for v in matrix.values[i]]
        lines.append("\t".join(cells))
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_struct_matrix(data: bytes) -> StructMatrix:
    lines = data.decode("utf-8").splitlines()
    if not lines:
        raise GraphError("empty structural matrix file")
    header = lines[0].split("\t")
    if header[:2] != ["domain", "kind"]:
        raise GraphError("unrecognized structural matrix header")
    columns = header[2:]
    keys = []
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split("\t")
        keys.append(NodeKey(cells[0], cells[1]))
        rows.append([float(c) for c in cells[2:]])
    values = np.array(rows, dtype=float) if rows else np.zeros((0, len(columns)))
    return StructMatrix(
        keys=keys,
        columns=columns,
        generations=[generation_of(c) for c in columns],
        values=values,
    )
