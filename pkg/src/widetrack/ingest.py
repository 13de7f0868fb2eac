"""HAR session ingestion: entries, initiator resolution, dependency trees."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from urllib.parse import urlsplit

from .domains import registrable_domain


class HarParseError(ValueError):
    """Malformed HAR document. ``offset`` is the byte position when known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte {offset})")
        self.offset = offset


class InteractionKind(str, Enum):
    SCRIPT = "script"
    MEDIA = "media"
    IFRAME = "iframe"
    OTHER = "other"
    BOUNCED = "bounced"  # edge label only, never a node kind


NODE_KINDS = (
    InteractionKind.SCRIPT,
    InteractionKind.MEDIA,
    InteractionKind.IFRAME,
    InteractionKind.OTHER,
)

INITIATOR_TYPES = ("script", "parser", "other", "unknown")


@dataclass(frozen=True)
class RequestEntry:
    url: str
    initiator_url: str | None
    initiator_type: str  # one of INITIATOR_TYPES
    resource_type: str | None
    started_at: str
    mime: str | None = None


@dataclass
class SessionRecord:
    """All parsed requests of one site visit, plus a skip report."""

    site_url: str
    entries: list[RequestEntry]
    skipped: Counter = field(default_factory=Counter)

    @property
    def skip_count(self) -> int:
        return sum(self.skipped.values())


@dataclass
class DependencyTree:
    """Per-visit initiator graph over (url, kind) nodes, rooted at the page."""

    root_url: str
    root_domain: str
    nodes: dict[str, str]  # url -> interaction kind value
    edges: dict[tuple[str, str], int]  # (initiator url, requested url) -> multiplicity
    diagnostics: Counter = field(default_factory=Counter)
    skipped: Counter = field(default_factory=Counter)

    def third_party_urls(self) -> list[str]:
        return [
            u
            for u in self.nodes
            if registrable_domain(urlsplit(u).hostname) != self.root_domain
        ]

    def to_record(self) -> dict:
        return {
            "root_url": self.root_url,
            "root_domain": self.root_domain,
            "nodes": sorted(self.nodes.items()),
            "edges": sorted((s, d, m) for (s, d), m in self.edges.items()),
            "diagnostics": dict(sorted(self.diagnostics.items())),
            "skipped": dict(sorted(self.skipped.items())),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "DependencyTree":
        return cls(
            root_url=rec["root_url"],
            root_domain=rec["root_domain"],
            nodes={u: k for u, k in rec["nodes"]},
            edges={(s, d): m for s, d, m in rec["edges"]},
            diagnostics=Counter(rec.get("diagnostics", {})),
            skipped=Counter(rec.get("skipped", {})),
        )


def _valid_url(url: str) -> bool:
    try:
        parts = urlsplit(url)
    except ValueError:
        return False
    return parts.scheme in ("http", "https") and bool(parts.hostname)


def _stack_top_url(stack: dict) -> str | None:
    """First frame URL in a Chromium initiator call stack, parents included."""
    while isinstance(stack, dict):
        for frame in stack.get("callFrames", []):
            url = frame.get("url")
            if url:
                return url
        stack = stack.get("parent")
    return None


def classify_interaction(
    resource_type: str | None, mime: str | None = None
) -> InteractionKind:
    """Map a capture resource type (or, failing that, a MIME type) to a kind.

    The top frame's document also maps to Iframe here; it becomes the tree
    root, whose kind is discarded during path contraction.
    """
    if resource_type:
        rt = resource_type.lower()
        if rt == "script":
            return InteractionKind.SCRIPT
        if rt in ("image", "media", "font"):
            return InteractionKind.MEDIA
        if rt in ("document", "subdocument"):
            return InteractionKind.IFRAME
        return InteractionKind.OTHER
    if mime:
        m = mime.lower()
        if m.startswith(("image/", "video/", "audio/")):
            return InteractionKind.MEDIA
        if "javascript" in m:
            return InteractionKind.SCRIPT
        if m.startswith("text/html"):
            return InteractionKind.IFRAME
    return InteractionKind.OTHER


def parse_har(data: bytes) -> SessionRecord:
    """Parse HAR 1.2 bytes into a SessionRecord.

    Initiators resolve in priority order: explicit initiator URL, top frame
    of the initiator call stack, the document URL for parser-initiated
    entries, otherwise unknown. Entries without a usable URL (bad syntax,
    data:/blob: schemes) are skipped and tallied.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise HarParseError("not valid UTF-8", exc.start) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise HarParseError(
            exc.msg, len(text[: exc.pos].encode("utf-8"))
        ) from exc

    try:
        raw_entries = doc["log"]["entries"]
    except (TypeError, KeyError) as exc:
        raise HarParseError("document has no log.entries") from exc
    if not isinstance(raw_entries, list):
        raise HarParseError("log.entries is not a list")

    skipped: Counter = Counter()
    parsed: list[tuple[str, dict]] = []
    for raw in raw_entries:
        if not isinstance(raw, dict) or "request" not in raw:
            skipped["malformed_entry"] += 1
            continue
        url = raw.get("request", {}).get("url")
        if not isinstance(url, str) or not url:
            skipped["malformed_entry"] += 1
            continue
        scheme = url.split(":", 1)[0].lower()
        if scheme in ("data", "blob", "about", "chrome-extension"):
            skipped["no_hostname"] += 1
            continue
        if not _valid_url(url):
            skipped["bad_url"] += 1
            continue
        parsed.append((raw.get("startedDateTime", ""), raw))
    if not parsed:
        raise HarParseError("no usable entries in capture")

    parsed.sort(key=lambda item: item[0])  # stable: ties keep file order
    document_url = parsed[0][1]["request"]["url"]

    entries = []
    for started_at, raw in parsed:
        url = raw["request"]["url"]
        ini = raw.get("_initiator") or {}
        if isinstance(ini, str):
            ini = {"url": ini}
        ini_type = str(ini.get("type", "")).lower()
        if ini_type not in INITIATOR_TYPES:
            ini_type = "other" if ini_type else "unknown"

        initiator_url = ini.get("url")
        if not initiator_url and isinstance(ini.get("stack"), dict):
            initiator_url = _stack_top_url(ini["stack"])
        if not initiator_url and ini_type == "parser":
            initiator_url = document_url
        if not initiator_url:
            ini_type = "unknown"
            initiator_url = None

        mime = raw.get("response", {}).get("content", {}).get("mimeType")
        entries.append(
            RequestEntry(
                url=url,
                initiator_url=initiator_url,
                initiator_type=ini_type,
                resource_type=raw.get("_resourceType"),
                started_at=started_at,
                mime=mime,
            )
        )

    # Redirect hops initiate their targets; fill that in where the capture
    # left the target's initiator unknown.
    redirects: dict[str, str] = {}
    for _, raw in parsed:
        target = raw.get("response", {}).get("redirectURL")
        if target:
            redirects.setdefault(target, raw["request"]["url"])
    entries = [
        e
        if e.initiator_url or e.url not in redirects or e.url == redirects[e.url]
        else RequestEntry(
            e.url, redirects[e.url], "other", e.resource_type, e.started_at, e.mime
        )
        for e in entries
    ]

    return SessionRecord(site_url=document_url, entries=entries, skipped=skipped)


def build_tree(record: SessionRecord) -> DependencyTree:
    """Resolve initiator edges into a dependency tree for one session.

    Nodes are keyed by URL (first-seen kind wins); duplicate initiator pairs
    collapse into edge multiplicity. Entries whose initiator is unknown or
    never itself requested attach to the root. Nothing may point back at the
    root; such edges are dropped and tallied in diagnostics.
    """
    if not record.entries:
        raise ValueError("SessionRecord has no entries")
    root_url = record.site_url
    root_host = urlsplit(root_url).hostname
    if not root_host:
        raise ValueError("site_url has no hostname")
    root_domain = registrable_domain(root_host)

    nodes: dict[str, str] = {}
    for entry in record.entries:
        kind = classify_interaction(entry.resource_type, entry.mime)
        nodes.setdefault(entry.url, kind.value)
    nodes.setdefault(root_url, InteractionKind.IFRAME.value)

    diagnostics: Counter = Counter()
    edges: dict[tuple[str, str], int] = {}
    for entry in record.entries:
        if entry.url == root_url:
            if entry.initiator_url and entry.initiator_url != root_url:
                diagnostics["edge_to_root_dropped"] += 1
            continue
        src = entry.initiator_url
        if src is None or src not in nodes:
            src = root_url
        if src == entry.url:
            diagnostics["self_edge_dropped"] += 1
            src = root_url
        edges[(src, entry.url)] = edges.get((src, entry.url), 0) + 1

    return DependencyTree(
        root_url=root_url,
        root_domain=root_domain,
        nodes=nodes,
        edges=edges,
        diagnostics=diagnostics,
        skipped=Counter(record.skipped),
    )


def write_trees(trees: list[DependencyTree]) -> bytes:
    """Serialize trees as line-delimited JSON with a version header."""
    lines = [json.dumps({"format": "widetrack-trees", "version": 1})]
    for tree in trees:
        lines.append(json.dumps(tree.to_record(), sort_keys=True))
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_trees(data: bytes) -> list[DependencyTree]:
    lines = data.decode("utf-8").splitlines()
    if not lines:
        raise HarParseError("empty trees file")
    header = json.loads(lines[0])
    if header.get("format") != "widetrack-trees" or header.get("version") != 1:
        raise HarParseError("unrecognized trees file header")
    return [DependencyTree.from_record(json.loads(line)) for line in lines[1:] if line]
