import random
from collections import Counter
from fractions import Fraction

import pytest

from widetrack.graph import (
    BOUNCED,
    FIRST_PARTY,
    GraphError,
    GraphFormatError,
    NodeKey,
    WideGraph,
    build_widegraph,
    contract_tree,
    coverage,
    coverage_counts,
    expand_edges,
    load_graph,
    merge,
    save_graph,
    stats,
)
from widetrack.ingest import DependencyTree


def tree(root_domain, nodes, edges, root_url=None):
    root_url = root_url or f"https://www.{root_domain}/"
    all_nodes = {root_url: "iframe"}
    all_nodes.update(nodes)
    return DependencyTree(
        root_url=root_url,
        root_domain=root_domain,
        nodes=all_nodes,
        edges=dict(edges),
        diagnostics=Counter(),
        skipped=Counter(),
    )


def site_graph(*trees):
    g = WideGraph()
    for t in trees:
        merge(g, expand_edges(contract_tree(t)))
    return g


class TestContractTree:
    def test_all_first_party_collapses_to_super_node(self):
        root = "https://www.site.com/"
        t = tree(
            "site.com",
            {"https://www.site.com/main.css": "other", "https://static.site.com/a.png": "media"},
            {(root, "https://www.site.com/main.css"): 1, (root, "https://static.site.com/a.png"): 1},
        )
        site = contract_tree(t)
        assert site.nodes == set()
        assert site.edges == {}
        assert site.documents == {}

    def test_script_fanout_rekeys_to_domain_kind(self):
        # page embeds a script from d5; that script loads scripts from
        # d3, d4, d6; the d4 script issues a request back to d4.
        root = "https://www.site.com/"
        d5 = "https://a.d5.com/x.js"
        d3, d4, d6 = "https://b.d3.com/y.js", "https://c.d4.com/z.js", "https://d.d6.com/w.js"
        d4req = "https://c.d4.com/collect"
        t = tree(
            "site.com",
            {d5: "script", d3: "script", d4: "script", d6: "script", d4req: "other"},
            {(root, d5): 1, (d5, d3): 1, (d5, d4): 1, (d5, d6): 1, (d4, d4req): 1},
        )
        site = contract_tree(t)
        fp = site.first_party
        assert site.nodes == {
            NodeKey("d5.com", "script"),
            NodeKey("d3.com", "script"),
            NodeKey("d4.com", "script"),
            NodeKey("d6.com", "script"),
            NodeKey("d4.com", "other"),
        }
        assert site.edges == {
            (fp, NodeKey("d5.com", "script"), "script"): 1,
            (NodeKey("d5.com", "script"), NodeKey("d3.com", "script"), "script"): 1,
            (NodeKey("d5.com", "script"), NodeKey("d4.com", "script"), "script"): 1,
            (NodeKey("d5.com", "script"), NodeKey("d6.com", "script"), "script"): 1,
            (NodeKey("d4.com", "script"), NodeKey("d4.com", "other"), "other"): 1,
        }

    def test_edge_into_first_party_dropped_with_diagnostic(self):
        root = "https://www.site.com/"
        script = "https://t.tracker.net/t.js"
        fp_img = "https://www.site.com/logo.png"
        t = tree(
            "site.com",
            {script: "script", fp_img: "media"},
            {(root, script): 1, (script, fp_img): 1},
        )
        site = contract_tree(t)
        assert all(not dst.is_first_party() for (_, dst, _) in site.edges)
        assert site.diagnostics["edge_to_firstparty_dropped"] == 1

    def test_same_key_edge_becomes_self_edge_and_drops(self):
        root = "https://www.site.com/"
        a, b = "https://a.t.net/1.js", "https://b.t.net/2.js"
        t = tree("site.com", {a: "script", b: "script"}, {(root, a): 1, (a, b): 1})
        site = contract_tree(t)
        assert site.diagnostics["contracted_self_edge_dropped"] == 1
        assert (NodeKey("t.net", "script"), NodeKey("t.net", "script"), "script") not in site.edges

    def test_documents_group_urls_by_host_and_kind(self):
        root = "https://www.site.com/"
        u1, u2 = "https://px.t.net/a", "https://px.t.net/b"
        u3 = "https://sync.t.net/c"
        t = tree(
            "site.com",
            {u1: "other", u2: "other", u3: "other"},
            {(root, u1): 2, (root, u2): 1, (root, u3): 1},
        )
        site = contract_tree(t)
        assert site.documents[("px.t.net", "other")] == Counter({u1: 2, u2: 1})
        assert site.documents[("sync.t.net", "other")] == Counter({u3: 1})


class TestExpandEdges:
    def chain_site(self):
        root = "https://www.site.com/"
        a, b = "https://x.a.net/a.js", "https://x.b.net/b.js"
        t = tree("site.com", {a: "script", b: "script"}, {(root, a): 1, (a, b): 1})
        return contract_tree(t)

    def test_chain_gets_bounced_edge(self):
        site = expand_edges(self.chain_site())
        fp = site.first_party
        assert (fp, NodeKey("b.net", "script"), BOUNCED) in site.edges
        assert (fp, NodeKey("a.net", "script"), BOUNCED) not in site.edges

    def test_expand_is_idempotent(self):
        site = expand_edges(self.chain_site())
        again = expand_edges(site)
        assert again.edges[(site.first_party, NodeKey("b.net", "script"), BOUNCED)] == 1

    def test_star_gets_no_bounced_edges(self):
        root = "https://www.site.com/"
        a, b = "https://x.a.net/a.js", "https://x.b.net/b.png"
        t = tree("site.com", {a: "script", b: "media"}, {(root, a): 1, (root, b): 1})
        site = expand_edges(contract_tree(t))
        assert not any(label == BOUNCED for (_, _, label) in site.edges)

    def test_embedded_intermediary_bounces_target(self):
        # page embeds doubleclick, doubleclick loads adledge: the root gains
        # a Bounced edge to adledge.
        root = "https://www.latercera.com/"
        dc = "https://ad.doubleclick.net/tag.js"
        al = "https://cdn.adledge.com/m.js"
        t = tree(
            "latercera.com", {dc: "script", al: "script"}, {(root, dc): 1, (dc, al): 1}
        )
        site = expand_edges(contract_tree(t))
        assert (site.first_party, NodeKey("adledge.com", "script"), BOUNCED) in site.edges


class TestMerge:
    def test_disjoint_sites_sum(self):
        t1 = tree(
            "one.com",
            {"https://a.t1.net/x.js": "script"},
            {("https://www.one.com/", "https://a.t1.net/x.js"): 1},
        )
        t2 = tree(
            "two.com",
            {"https://a.t2.net/y.js": "script"},
            {("https://www.two.com/", "https://a.t2.net/y.js"): 1},
        )
        g1, g2, both = site_graph(t1), site_graph(t2), site_graph(t1, t2)
        assert len(both.nodes) == len(g1.nodes) + len(g2.nodes)
        assert len(both.edges) == len(g1.edges) + len(g2.edges)

    def test_shared_third_party_unifies_with_site_set(self):
        url1 = "https://ads.doubleclick.net/a.js"
        url2 = "https://ads.doubleclick.net/b.js"
        t1 = tree("one.com", {url1: "script"}, {("https://www.one.com/", url1): 1})
        t2 = tree("two.com", {url2: "script"}, {("https://www.two.com/", url2): 1})
        g = site_graph(t1, t2)
        key = NodeKey("doubleclick.net", "script")
        assert key in g.nodes
        doc = g.nodes[key].documents["ads.doubleclick.net"]
        assert doc.sites == {"one.com", "two.com"}
        assert doc.urls == Counter({url1: 1, url2: 1})

    def test_cross_site_cycle_merges_and_terminates(self):
        a1, b1 = "https://x.a.net/1.js", "https://x.b.net/2.js"
        a2, b2 = "https://x.a.net/3.js", "https://x.b.net/4.js"
        t1 = tree(
            "one.com", {a1: "script", b1: "script"},
            {("https://www.one.com/", a1): 1, (a1, b1): 1},
        )
        t2 = tree(
            "two.com", {a2: "script", b2: "script"},
            {("https://www.two.com/", b2): 1, (b2, a2): 1},
        )
        g = site_graph(t1, t2)
        ka, kb = NodeKey("a.net", "script"), NodeKey("b.net", "script")
        assert (ka, kb, "script") in g.edges and (kb, ka, "script") in g.edges
        # downstream algorithms must terminate on the 2-cycle
        stats(g)
        assert coverage(g, ka) == (0.5, 1.0)
        assert coverage(g, kb) == (0.5, 1.0)

    def test_remerging_same_root_is_additive(self):
        url = "https://a.t.net/x.js"
        t = tree("one.com", {url: "script"}, {("https://www.one.com/", url): 1})
        g = site_graph(t, t)
        assert g.roots == {"one.com"}
        key = NodeKey("t.net", "script")
        assert g.edges[(NodeKey("one.com", FIRST_PARTY), key, "script")].multiplicity == 2

    def test_merge_order_insensitive(self):
        trees = []
        for i in range(6):
            root = f"site{i}.com"
            url1 = f"https://a.shared.net/{i}.js"
            url2 = f"https://b.other{i % 3}.net/{i}.png"
            trees.append(
                tree(
                    root,
                    {url1: "script", url2: "media"},
                    {(f"https://www.{root}/", url1): 1, (url1, url2): 1},
                )
            )
        g1 = site_graph(*trees)
        shuffled = trees[:]
        random.Random(5).shuffle(shuffled)
        g2 = site_graph(*shuffled)
        assert g1 == g2


class TestCoverage:
    def three_root_fixture(self):
        target = "https://px.target.net/t.js"
        mid = "https://m.mid.net/m.js"
        t1 = tree(
            "r1.com", {target: "script"}, {("https://www.r1.com/", target): 1}
        )
        t2 = tree(
            "r2.com",
            {mid: "script", "https://px.target.net/u.js": "script"},
            {
                ("https://www.r2.com/", mid): 1,
                (mid, "https://px.target.net/u.js"): 1,
            },
        )
        t3 = tree(
            "r3.com",
            {"https://x.noise.net/n.png": "media"},
            {("https://www.r3.com/", "https://x.noise.net/n.png"): 1},
        )
        return site_graph(t1, t2, t3), [t1, t2, t3]

    def test_direct_and_indirect_fractions(self):
        g, trees = self.three_root_fixture()
        key = NodeKey("target.net", "script")
        d, i, n = coverage_counts(g, key)

        # brute-force oracle: per-site reachability over the raw trees
        direct_sites = indirect_sites = 0
        for t in trees:
            adj = {}
            for (src, dst) in t.edges:
                adj.setdefault(src, set()).add(dst)
            seen, stack = set(), [t.root_url]
            while stack:
                for nxt in adj.get(stack.pop(), ()):
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            hits = {
                u for u in seen if t.nodes[u] == "script" and ".target.net/" in u
            }
            if hits:
                indirect_sites += 1
            if any(t.edges.get((t.root_url, u)) for u in hits):
                direct_sites += 1
        assert Fraction(d, n) == Fraction(direct_sites, 3) == Fraction(1, 3)
        assert Fraction(i, n) == Fraction(indirect_sites, 3) == Fraction(2, 3)
        assert coverage(g, key) == (1 / 3, 2 / 3)

    def test_everywhere_direct_is_full_coverage(self):
        url = "https://px.t.net/x.js"
        trees = [
            tree(f"r{i}.com", {url: "script"}, {(f"https://www.r{i}.com/", url): 1})
            for i in range(4)
        ]
        g = site_graph(*trees)
        assert coverage(g, NodeKey("t.net", "script")) == (1.0, 1.0)

    def test_unknown_and_first_party_nodes_rejected(self):
        g, _ = self.three_root_fixture()
        with pytest.raises(GraphError):
            coverage(g, NodeKey("nowhere.net", "script"))
        with pytest.raises(GraphError):
            coverage(g, NodeKey("r1.com", FIRST_PARTY))

    def test_indirect_at_least_direct_everywhere(self):
        g, _ = self.three_root_fixture()
        for key in g.third_party_keys():
            d, i = coverage(g, key)
            assert 0.0 <= d <= i <= 1.0


class TestInvariants:
    def build(self):
        g, _ = TestCoverage().three_root_fixture()
        return g

    def test_first_party_nodes_have_no_in_edges(self):
        g = self.build()
        for (src, dst, label) in g.edges:
            assert not dst.is_first_party()
            if label == BOUNCED:
                assert src.is_first_party()

    def test_at_most_four_nodes_per_domain(self):
        g = self.build()
        per_domain = Counter(k.domain for k in g.third_party_keys())
        assert all(count <= 4 for count in per_domain.values())

    def test_document_sites_subset_of_roots(self):
        g = self.build()
        docs = g.documents()
        assert sum(len(d.sites) for d in docs) >= len(docs)
        for doc in docs:
            assert doc.sites <= g.roots


class TestSerialization:
    def test_empty_graph_round_trips(self):
        g = WideGraph()
        assert load_graph(save_graph(g)) == g

    def test_round_trip_structural_equality(self):
        g, _ = TestCoverage().three_root_fixture()
        loaded = load_graph(save_graph(g))
        assert loaded == g
        assert save_graph(loaded) == save_graph(g)

    def test_random_graphs_round_trip(self):
        from widetrack.ingest import build_tree, parse_har
        from widetrack.synth import EcosystemConfig, generate

        for seed in range(5):
            corpus = generate(
                EcosystemConfig(
                    n_sites=30, n_trackers=12, n_benign=10,
                    tracker_embed_prob=0.4, benign_embed_prob=0.15,
                    bounce_prob=0.5, seed=seed,
                )
            )
            g = build_widegraph(
                [build_tree(parse_har(data)) for _, data in corpus.har_files]
            )
            assert len(g.nodes) >= 50
            loaded = load_graph(save_graph(g))
            assert loaded == g
            assert save_graph(loaded) == save_graph(g)

    def test_corrupted_payload_is_a_load_error(self):
        g, _ = TestCoverage().three_root_fixture()
        data = save_graph(g)
        # truncate mid-record so a line stops being valid JSON
        cut = data.index(b'"t": "edge"') + 5
        with pytest.raises(GraphFormatError):
            load_graph(data[:cut])
        with pytest.raises(GraphFormatError):
            load_graph(b"not a graph at all\n")
        with pytest.raises(GraphFormatError):
            load_graph(data.replace(b'"t": "edge"', b'"t": "wedge"', 1))

    def test_edge_to_unknown_node_rejected(self):
        lines = [
            b'{"format": "widegraph", "version": 1}',
            b'{"d": "a.com", "k": "script", "t": "node"}',
            b'{"l": "script", "m": 1, "s": ["ghost.com", "firstparty"], "sites": ["ghost.com"], "t": "edge", "x": ["a.com", "script"]}',
        ]
        with pytest.raises(GraphFormatError):
            load_graph(b"\n".join(lines) + b"\n")


def test_build_widegraph_convenience():
    _, trees = TestCoverage().three_root_fixture()
    g = build_widegraph(trees)
    assert g.roots == {"r1.com", "r2.com", "r3.com"}


def test_stats_shape():
    g, _ = TestCoverage().three_root_fixture()
    st = stats(g)
    assert st["roots"] == 3
    assert st["third_party_nodes"] == len(g.third_party_keys())
    assert st["edges_by_label"].get(BOUNCED, 0) >= 1
    assert st["top_coverage"][0]["direct"] >= st["top_coverage"][-1]["direct"]
    # r1: target at depth 1; r2: mid at 1, target at 2; r3: noise at 1
    assert st["avg_path_length"] == pytest.approx((1 + 1 + 2 + 1) / 4)


def test_average_path_length_ignores_bounced_shortcuts():
    from widetrack.graph import average_path_length

    root = "https://www.site.com/"
    a, b, c = (
        "https://x.a.net/a.js",
        "https://x.b.net/b.js",
        "https://x.c.net/c.js",
    )
    t = tree(
        "site.com",
        {a: "script", b: "script", c: "script"},
        {(root, a): 1, (a, b): 1, (b, c): 1},
    )
    g = site_graph(t)
    assert average_path_length(g) == pytest.approx((1 + 2 + 3) / 3)
