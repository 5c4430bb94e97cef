"""Class hierarchy with dotted node ids ("1", "1.1", "1.1.1", ...).

Two JSON layouts are accepted:

* nested: ``{"node_id": "1", "code": "", "name": "Biota", "children": [...]}``
* flat:   ``{"nodes": [{"node_id": "1.1", "parent": "1", "code": ..., "name": ...}, ...]}``

A nested node may also carry a ``"parent"`` key; when present it must agree
with the nesting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Mapping

from .errors import (
    CycleDetected,
    DuplicateCode,
    OrphanNode,
    RootHasNoSiblings,
    TaxonomyError,
    UnknownNode,
)

DEFAULT_TAXONOMY = "catami_rottnest.json"
KELP_NODE = "1.1.1"


@dataclass(frozen=True)
class TaxonomyNode:
    node_id: str
    code: str
    display_name: str
    parent: str | None
    children: tuple[str, ...] = ()


@dataclass(frozen=True)
class TaxonomyTree:
    nodes: Mapping[str, TaxonomyNode]
    code_index: Mapping[str, str]
    root_id: str
    _desc_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: str) -> TaxonomyNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"unknown taxonomy node {node_id!r}") from None

    def node_for_code(self, code: str) -> TaxonomyNode:
        try:
            return self.nodes[self.code_index[code]]
        except KeyError:
            raise UnknownNode(f"no taxonomy node carries code {code!r}") from None

    def has_code(self, code: str) -> bool:
        return code in self.code_index

    @property
    def codes(self) -> list[str]:
        return sorted(self.code_index)

    def walk(self, node_id: str | None = None) -> Iterator[TaxonomyNode]:
        """Pre-order traversal starting at ``node_id`` (default: root)."""
        stack = [node_id or self.root_id]
        while stack:
            node = self.node(stack.pop())
            yield node
            stack.extend(reversed(node.children))

    def label_for(self, node_id: str) -> str:
        """Short label used for a node in binary reports: its code, else its id."""
        node = self.node(node_id)
        return node.code or node_id

    def to_dict(self, node_id: str | None = None) -> dict:
        node = self.node(node_id or self.root_id)
        return {
            "node_id": node.node_id,
            "code": node.code,
            "name": node.display_name,
            "children": [self.to_dict(c) for c in node.children],
        }


def _is_child_id(parent_id: str, child_id: str) -> bool:
    head, _, last = child_id.rpartition(".")
    return head == parent_id and last != ""


def _flatten_nested(doc: dict) -> list[dict]:
    out = []
    seen: set[int] = set()

    def visit(entry, parent_id):
        if id(entry) in seen:
            raise CycleDetected("taxonomy document references itself")
        seen.add(id(entry))
        if not isinstance(entry, dict) or "node_id" not in entry:
            raise TaxonomyError(f"taxonomy entry without node_id: {entry!r}")
        declared = entry.get("parent", parent_id)
        if declared != parent_id:
            raise OrphanNode(
                f"node {entry['node_id']!r} declares parent {declared!r} "
                f"but is nested under {parent_id!r}"
            )
        out.append({**entry, "parent": parent_id})
        for child in entry.get("children", []):
            visit(child, str(entry["node_id"]))

    visit(doc, None)
    return out


def tree_from_entries(entries: list[dict]) -> TaxonomyTree:
    """Build and validate a tree from flat ``{node_id, parent, code, name}`` records."""
    by_id: dict[str, dict] = {}
    for e in entries:
        nid = str(e["node_id"])
        if nid in by_id:
            raise CycleDetected(f"node {nid!r} appears more than once")
        by_id[nid] = e

    roots = [nid for nid, e in by_id.items() if e.get("parent") is None]
    if len(roots) != 1:
        raise OrphanNode(f"expected exactly one root, found {sorted(roots)}")
    root_id = roots[0]

    parent_of = {nid: (None if e.get("parent") is None else str(e["parent"])) for nid, e in by_id.items()}
    for nid, parent in parent_of.items():
        if parent is not None and parent not in by_id:
            raise OrphanNode(f"node {nid!r} references missing parent {parent!r}")

    # cycles show up as parent chains that never reach the root
    for nid in by_id:
        steps, cur = 0, nid
        while cur is not None:
            cur = parent_of[cur]
            steps += 1
            if steps > len(by_id):
                raise CycleDetected(f"parent chain from {nid!r} does not terminate")

    for nid, parent in parent_of.items():
        if parent is not None and not _is_child_id(parent, nid):
            raise OrphanNode(f"node id {nid!r} does not extend its parent id {parent!r}")

    children: dict[str, list[str]] = {nid: [] for nid in by_id}
    for e in entries:
        nid = str(e["node_id"])
        if parent_of[nid] is not None:
            children[parent_of[nid]].append(nid)

    nodes = {}
    code_index: dict[str, str] = {}
    for nid, e in by_id.items():
        code = str(e.get("code") or "")
        if code:
            if code in code_index:
                raise DuplicateCode(f"code {code!r} used by {code_index[code]!r} and {nid!r}")
            code_index[code] = nid
        nodes[nid] = TaxonomyNode(
            node_id=nid,
            code=code,
            display_name=str(e.get("name", "")),
            parent=parent_of[nid],
            children=tuple(children[nid]),
        )
    return TaxonomyTree(nodes=nodes, code_index=code_index, root_id=root_id)


def tree_from_dict(doc: dict) -> TaxonomyTree:
    if "nodes" in doc and "node_id" not in doc:
        return tree_from_entries(list(doc["nodes"]))
    return tree_from_entries(_flatten_nested(doc))


def load_taxonomy(path: str | Path | None = None) -> TaxonomyTree:
    """Load a taxonomy JSON file; ``None`` loads the bundled CATAMI/Rottnest tree."""
    if path is None:
        text = resources.files("benthoscan.data").joinpath(DEFAULT_TAXONOMY).read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TaxonomyError(f"taxonomy is not valid JSON: {exc}") from None
    return tree_from_dict(doc)


def descendants(tree: TaxonomyTree, node_id: str) -> frozenset[str]:
    """Codes carried anywhere in the subtree rooted at ``node_id``, the node itself included.

    Grouping nodes have no code and so contribute nothing.
    """
    cached = tree._desc_cache.get(node_id)
    if cached is None:
        cached = frozenset(n.code for n in tree.walk(node_id) if n.code)
        tree._desc_cache[node_id] = cached
    return cached


def siblings_under(tree: TaxonomyTree, node_id: str) -> frozenset[str]:
    node = tree.node(node_id)
    if node.parent is None:
        raise RootHasNoSiblings(f"node {node_id!r} is the root")
    return descendants(tree, node.parent) - descendants(tree, node_id)
