"""Merged cross-site dependency graph and its per-site building blocks.

Third parties appear as up to four (domain, kind) nodes; first parties are
super-nodes with no incoming edges. Sub-domain documents live inside their
parent third-party node and are the unit later classified.
"""

from __future__ import annotations

import json
from collections import Counter, deque
from dataclasses import dataclass, field
from urllib.parse import urlsplit

from .domains import registrable_domain
from .ingest import DependencyTree, InteractionKind

FIRST_PARTY = "firstparty"
BOUNCED = InteractionKind.BOUNCED.value


class GraphError(ValueError):
    pass


class GraphFormatError(GraphError):
    """Raised when a persisted graph cannot be decoded."""


@dataclass(frozen=True, order=True)
class NodeKey:
    domain: str
    kind: str  # interaction kind value or FIRST_PARTY

    def is_first_party(self) -> bool:
        return self.kind == FIRST_PARTY


@dataclass
class EdgeData:
    multiplicity: int = 0
    sites: set[str] = field(default_factory=set)


@dataclass
class SubdomainDocument:
    host: str
    kind: str
    urls: Counter  # url -> request count
    sites: set[str]
    parent: NodeKey

    def url_list(self) -> list[str]:
        """URLs expanded by multiplicity, in sorted order."""
        out = []
        for url in sorted(self.urls):
            out.extend([url] * self.urls[url])
        return out


@dataclass
class Node:
    key: NodeKey
    documents: dict[str, SubdomainDocument] = field(default_factory=dict)


@dataclass
class SiteTree:
    """One site's contracted (and optionally expanded) dependency tree."""

    root_domain: str
    nodes: set[NodeKey]  # third-party keys only
    edges: dict[tuple[NodeKey, NodeKey, str], int]
    documents: dict[tuple[str, str], Counter]  # (host, kind) -> url counter
    diagnostics: Counter = field(default_factory=Counter)

    @property
    def first_party(self) -> NodeKey:
        return NodeKey(self.root_domain, FIRST_PARTY)


class WideGraph:
    def __init__(self):
        self.roots: set[str] = set()
        self.nodes: dict[NodeKey, Node] = {}
        self.edges: dict[tuple[NodeKey, NodeKey, str], EdgeData] = {}

    def third_party_keys(self) -> list[NodeKey]:
        return sorted(k for k in self.nodes if not k.is_first_party())

    def documents(self) -> list[SubdomainDocument]:
        docs = []
        for key in self.third_party_keys():
            node = self.nodes[key]
            docs.extend(node.documents[h] for h in sorted(node.documents))
        return docs

    def in_edges(self, key: NodeKey):
        return [
            (src, label, data)
            for (src, dst, label), data in self.edges.items()
            if dst == key
        ]

    def out_edges(self, key: NodeKey):
        return [
            (dst, label, data)
            for (src, dst, label), data in self.edges.items()
            if src == key
        ]

    def in_degree(self, key: NodeKey) -> int:
        """Distinct in-edges, multiplicity ignored."""
        return sum(1 for (_, dst, _) in self.edges if dst == key)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WideGraph):
            return NotImplemented
        if self.roots != other.roots or set(self.nodes) != set(other.nodes):
            return False
        if set(self.edges) != set(other.edges):
            return False
        for key, data in self.edges.items():
            o = other.edges[key]
            if data.multiplicity != o.multiplicity or data.sites != o.sites:
                return False
        for key, node in self.nodes.items():
            onode = other.nodes[key]
            if set(node.documents) != set(onode.documents):
                return False
            for host, doc in node.documents.items():
                odoc = onode.documents[host]
                if doc.urls != odoc.urls or doc.sites != odoc.sites:
                    return False
        return True


def contract_tree(tree: DependencyTree) -> SiteTree:
    """Collapse first-party URLs into one super-node, key third parties.

    Edges into the first party and edges that become self-loops after
    re-keying are dropped and tallied in diagnostics.
    """
    fp = NodeKey(tree.root_domain, FIRST_PARTY)
    key_of: dict[str, NodeKey] = {}
    documents: dict[tuple[str, str], Counter] = {}
    nodes: set[NodeKey] = set()

    request_count: dict[str, int] = {url: 0 for url in tree.nodes}
    for (_, dst), mult in tree.edges.items():
        request_count[dst] += mult

    for url, kind in tree.nodes.items():
        host = urlsplit(url).hostname
        domain = registrable_domain(host)
        if domain == tree.root_domain:
            key_of[url] = fp
            continue
        key = NodeKey(domain, kind)
        key_of[url] = key
        nodes.add(key)
        doc = documents.setdefault((host, kind), Counter())
        doc[url] += max(request_count[url], 1)

    diagnostics = Counter(tree.diagnostics)
    edges: dict[tuple[NodeKey, NodeKey, str], int] = {}
    for (src_url, dst_url), mult in tree.edges.items():
        src, dst = key_of[src_url], key_of[dst_url]
        if dst == fp:
            diagnostics["edge_to_firstparty_dropped"] += mult
            continue
        if src == dst:
            diagnostics["contracted_self_edge_dropped"] += mult
            continue
        label = dst.kind
        edges[(src, dst, label)] = edges.get((src, dst, label), 0) + mult

    return SiteTree(
        root_domain=tree.root_domain,
        nodes=nodes,
        edges=edges,
        documents=documents,
        diagnostics=diagnostics,
    )


def expand_edges(site: SiteTree) -> SiteTree:
    """Add one Bounced root edge per third party reachable only indirectly."""
    fp = site.first_party
    adjacency: dict[NodeKey, set[NodeKey]] = {}
    direct: set[NodeKey] = set()
    for (src, dst, label) in site.edges:
        adjacency.setdefault(src, set()).add(dst)
        if src == fp and label != BOUNCED:
            direct.add(dst)

    reachable: set[NodeKey] = set()
    queue = deque([fp])
    seen = {fp}
    while queue:
        for nxt in adjacency.get(queue.popleft(), ()):
            if nxt not in seen:
                seen.add(nxt)
                reachable.add(nxt)
                queue.append(nxt)

    for node in reachable:
        if node not in direct:
            site.edges.setdefault((fp, node, BOUNCED), 1)
    return site


def merge(graph: WideGraph, site: SiteTree) -> WideGraph:
    """Fuse a contracted, expanded site tree into the graph in place.

    Nodes with the same domain and kind unify; edge multiplicities add and
    their contributing-site sets union; same (host, kind) documents append.
    """
    root = site.root_domain
    graph.roots.add(root)
    fp = site.first_party
    graph.nodes.setdefault(fp, Node(fp))
    for key in site.nodes:
        graph.nodes.setdefault(key, Node(key))

    for (src, dst, label), mult in site.edges.items():
        if dst.is_first_party():
            raise GraphError("first-party nodes cannot have incoming edges")
        data = graph.edges.setdefault((src, dst, label), EdgeData())
        data.multiplicity += mult
        data.sites.add(root)

    for (host, kind), urls in site.documents.items():
        parent = NodeKey(registrable_domain(host), kind)
        node = graph.nodes[parent]
        doc = node.documents.get(host)
        if doc is None:
            doc = SubdomainDocument(host, kind, Counter(), set(), parent)
            node.documents[host] = doc
        doc.urls.update(urls)
        doc.sites.add(root)
    return graph


def build_widegraph(trees: list[DependencyTree]) -> WideGraph:
    graph = WideGraph()
    for tree in trees:
        merge(graph, expand_edges(contract_tree(tree)))
    return graph


def coverage_counts(graph: WideGraph, key: NodeKey) -> tuple[int, int, int]:
    """(direct roots, indirect roots, total roots) for a third-party node."""
    if key not in graph.nodes:
        raise GraphError(f"unknown node {key}")
    if key.is_first_party():
        raise GraphError("coverage is undefined for first-party nodes")
    direct: set[str] = set()
    indirect: set[str] = set()
    for (src, dst, label), _ in graph.edges.items():
        if dst == key and src.is_first_party():
            indirect.add(src.domain)
            if label != BOUNCED:
                direct.add(src.domain)
    return len(direct), len(indirect), len(graph.roots)


def coverage(graph: WideGraph, key: NodeKey) -> tuple[float, float]:
    """Fractions of first parties linking to the node directly / at all.

    Indirect coverage reads the per-site Bounced edges added at expansion
    time; merged-graph multi-hop paths would mix edges from different sites
    and overcount.
    """
    d, i, n = coverage_counts(graph, key)
    if n == 0:
        return 0.0, 0.0
    return d / n, i / n


def average_path_length(graph: WideGraph) -> float:
    """Mean shortest-path length from first parties to reachable third
    parties, over real (non-Bounced) edges; 0.0 when nothing is reachable."""
    adjacency: dict[NodeKey, list[NodeKey]] = {}
    for (src, dst, label) in graph.edges:
        if label != BOUNCED:
            adjacency.setdefault(src, []).append(dst)
    total = pairs = 0
    for root in graph.roots:
        fp = NodeKey(root, FIRST_PARTY)
        dist = {fp: 0}
        queue = deque([fp])
        while queue:
            node = queue.popleft()
            for nxt in adjacency.get(node, ()):
                if nxt not in dist:
                    dist[nxt] = dist[node] + 1
                    queue.append(nxt)
        for node, d in dist.items():
            if not node.is_first_party():
                total += d
                pairs += 1
    return total / pairs if pairs else 0.0


def stats(graph: WideGraph) -> dict:
    label_counts: Counter = Counter(label for (_, _, label) in graph.edges)
    third = graph.third_party_keys()
    rows = []
    for key in third:
        d, i, n = coverage_counts(graph, key)
        rows.append(
            {
                "domain": key.domain,
                "kind": key.kind,
                "direct": d / n if n else 0.0,
                "indirect": i / n if n else 0.0,
                "in_degree": graph.in_degree(key),
            }
        )
    rows.sort(key=lambda r: (-r["direct"], -r["indirect"], r["domain"], r["kind"]))
    return {
        "roots": len(graph.roots),
        "nodes": len(graph.nodes),
        "third_party_nodes": len(third),
        "edges": len(graph.edges),
        "edge_multiplicity_total": sum(e.multiplicity for e in graph.edges.values()),
        "edges_by_label": dict(sorted(label_counts.items())),
        "documents": len(graph.documents()),
        "avg_path_length": average_path_length(graph),
        "top_coverage": rows[:20],
    }


_FORMAT = {"format": "widegraph", "version": 1}


def save_graph(graph: WideGraph) -> bytes:
    """Line-delimited records, deterministically ordered."""
    lines = [json.dumps(_FORMAT, sort_keys=True)]
    for domain in sorted(graph.roots):
        lines.append(json.dumps({"t": "root", "d": domain}, sort_keys=True))
    for key in sorted(graph.nodes):
        lines.append(json.dumps({"t": "node", "d": key.domain, "k": key.kind}, sort_keys=True))
    for (src, dst, label) in sorted(graph.edges):
        data = graph.edges[(src, dst, label)]
        lines.append(
            json.dumps(
                {
                    "t": "edge",
                    "s": [src.domain, src.kind],
                    "x": [dst.domain, dst.kind],
                    "l": label,
                    "m": data.multiplicity,
                    "sites": sorted(data.sites),
                },
                sort_keys=True,
            )
        )
    for doc in graph.documents():
        lines.append(
            json.dumps(
                {
                    "t": "doc",
                    "h": doc.host,
                    "k": doc.kind,
                    "p": [doc.parent.domain, doc.parent.kind],
                    "urls": sorted(doc.urls.items()),
                    "sites": sorted(doc.sites),
                },
                sort_keys=True,
            )
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_graph(data: bytes) -> WideGraph:
    try:
        lines = data.decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise GraphFormatError("graph file is not UTF-8") from exc
    if not lines:
        raise GraphFormatError("empty graph file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise GraphFormatError("bad graph header") from exc
    if header != _FORMAT:
        raise GraphFormatError(f"unsupported graph format {header!r}")

    graph = WideGraph()
    try:
        for line in lines[1:]:
            if not line:
                continue
            rec = json.loads(line)
            kind = rec["t"]
            if kind == "root":
                graph.roots.add(rec["d"])
            elif kind == "node":
                key = NodeKey(rec["d"], rec["k"])
                graph.nodes[key] = Node(key)
            elif kind == "edge":
                src = NodeKey(*rec["s"])
                dst = NodeKey(*rec["x"])
                if src not in graph.nodes or dst not in graph.nodes:
                    raise GraphFormatError("edge references unknown node")
                graph.edges[(src, dst, rec["l"])] = EdgeData(
                    rec["m"], set(rec["sites"])
                )
            elif kind == "doc":
                parent = NodeKey(*rec["p"])
                if parent not in graph.nodes:
                    raise GraphFormatError("document references unknown node")
                graph.nodes[parent].documents[rec["h"]] = SubdomainDocument(
                    host=rec["h"],
                    kind=rec["k"],
                    urls=Counter(dict((u, c) for u, c in rec["urls"])),
                    sites=set(rec["sites"]),
                    parent=parent,
                )
            else:
                raise GraphFormatError(f"unknown record type {kind!r}")
    except GraphFormatError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"corrupt graph record: {exc}") from exc
    return graph
