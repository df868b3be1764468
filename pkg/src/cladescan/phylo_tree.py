"""Rooted phylogenetic tree: parsing, count aggregation, triplet scan windows.

Internal nodes are integer-indexed records with parent/children maps; the
set-of-leaves semantics is kept on each node for taxon labeling and tests.
Branch lengths and internal labels are parsed and retained as metadata but
never used by the statistics, which depend on topology only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dm_model import CountTable

__all__ = [
    "PhyloTree",
    "TreeNode",
    "NodeCounts",
    "TripletSet",
    "NewickError",
    "parse_newick",
    "aggregate_counts",
    "enumerate_triplets",
    "label_internal_taxa",
    "group_by_rank",
    "read_taxonomy_tsv",
    "TAXONOMY_RANKS",
]

TAXONOMY_RANKS = ("kingdom", "phylum", "class", "order", "family", "genus",
                  "species")

UNCLASSIFIED = "unclassified"


class NewickError(ValueError):
    """Malformed Newick input; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass
class TreeNode:
    index: int
    parent: int | None
    children: list[int]
    name: str | None = None
    length: float | None = None
    leaf_set: frozenset[int] = frozenset()

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class PhyloTree:
    """Rooted tree over named leaves with preorder-indexed internal nodes.

    Leaves occupy indices 0..K-1 in left-to-right Newick order; internal
    nodes occupy K..K+|I|-1 in preorder, so ``internal_order`` (ascending)
    places every internal node before all of its internal descendants.
    """

    leaf_names: list[str]
    nodes: list[TreeNode]
    root: int
    internal_order: list[int] = field(default_factory=list)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_names)

    @property
    def internal_nodes(self) -> list[int]:
        return self.internal_order

    @property
    def n_internal(self) -> int:
        return len(self.internal_order)

    def children(self, i: int) -> list[int]:
        return self.nodes[i].children

    def parent(self, i: int) -> int | None:
        return self.nodes[i].parent

    def is_internal(self, i: int) -> bool:
        return bool(self.nodes[i].children)

    def arity(self) -> int:
        return max(len(self.nodes[i].children) for i in self.internal_order)

    def is_binary(self) -> bool:
        return self.arity() == 2

    def leaf_names_under(self, i: int) -> list[str]:
        return sorted(self.leaf_names[j] for j in self.nodes[i].leaf_set)

    def to_newick(self) -> str:
        def render(i: int) -> str:
            node = self.nodes[i]
            if node.is_leaf:
                return node.name or ""
            inner = ",".join(render(c) for c in node.children)
            return f"({inner})"
        return render(self.root) + ";"


def _finalize(leaf_names, raw_nodes, root_raw) -> PhyloTree:
    """Renumber raw parse nodes: leaves first in input order, then preorder
    internals, and fill leaf sets bottom-up."""
    index_map: dict[int, int] = {}
    next_leaf = 0
    order: list[int] = []
    stack = [root_raw]
    while stack:
        raw = stack.pop()
        order.append(raw)
        stack.extend(reversed(raw_nodes[raw]["children"]))
    n_leaves = len(leaf_names)
    next_internal = n_leaves
    for raw in order:
        if raw_nodes[raw]["children"]:
            index_map[raw] = next_internal
            next_internal += 1
    for raw in order:
        if not raw_nodes[raw]["children"]:
            index_map[raw] = raw_nodes[raw]["leaf_id"]

    nodes = [None] * len(raw_nodes)
    for raw, rec in enumerate(raw_nodes):
        idx = index_map[raw]
        nodes[idx] = TreeNode(
            index=idx,
            parent=None if rec["parent"] is None else index_map[rec["parent"]],
            children=[index_map[c] for c in rec["children"]],
            name=rec["name"],
            length=rec["length"],
        )
    internal_order = sorted(i for i in range(len(nodes)) if nodes[i].children)
    for i in reversed(internal_order):
        acc: set[int] = set()
        for c in nodes[i].children:
            if nodes[c].is_leaf:
                acc.add(c)
            else:
                acc |= nodes[c].leaf_set
        nodes[i].leaf_set = frozenset(acc)
    for i in range(n_leaves):
        nodes[i].leaf_set = frozenset({i})
    return PhyloTree(leaf_names, nodes, index_map[root_raw], internal_order)


def parse_newick(text: str) -> PhyloTree:
    """Parse a Newick string into a PhyloTree.

    Leaf labels must be unique and nonempty; quoted labels ('...') are
    supported.  Branch lengths are parsed and kept as metadata.  Raises
    NewickError with a byte offset on malformed input, duplicate leaves, a
    single-leaf tree, or an internal node with fewer than two children.
    """
    s = text.strip()
    if not s:
        raise NewickError("empty input", 0)
    pos = 0
    raw_nodes: list[dict] = []
    leaf_names: list[str] = []
    seen: set[str] = set()

    def new_node(parent):
        raw_nodes.append({"parent": parent, "children": [], "name": None,
                          "length": None, "leaf_id": None})
        return len(raw_nodes) - 1

    def parse_label() -> str:
        nonlocal pos
        if pos < len(s) and s[pos] == "'":
            end = s.find("'", pos + 1)
            if end < 0:
                raise NewickError("unterminated quoted label", pos)
            label = s[pos + 1:end]
            pos = end + 1
            return label
        start = pos
        while pos < len(s) and s[pos] not in "(),:;":
            pos += 1
        return s[start:pos].strip()

    def parse_length():
        nonlocal pos
        if pos < len(s) and s[pos] == ":":
            pos += 1
            start = pos
            while pos < len(s) and (s[pos].isdigit() or s[pos] in ".+-eE"):
                pos += 1
            try:
                return float(s[start:pos])
            except ValueError:
                raise NewickError("bad branch length", start) from None
        return None

    def parse_subtree(parent):
        nonlocal pos
        node = new_node(parent)
        if pos < len(s) and s[pos] == "(":
            pos += 1
            while True:
                child = parse_subtree(node)
                raw_nodes[node]["children"].append(child)
                if pos >= len(s):
                    raise NewickError("unexpected end of input", pos)
                if s[pos] == ",":
                    pos += 1
                    continue
                if s[pos] == ")":
                    pos += 1
                    break
                raise NewickError(f"unexpected character {s[pos]!r}", pos)
            raw_nodes[node]["name"] = parse_label() or None
            raw_nodes[node]["length"] = parse_length()
            if len(raw_nodes[node]["children"]) < 2:
                raise NewickError("internal node with fewer than 2 children", pos)
        else:
            label_start = pos
            label = parse_label()
            if not label:
                raise NewickError("empty leaf label", label_start)
            if label in seen:
                raise NewickError(f"duplicate leaf label {label!r}", label_start)
            seen.add(label)
            raw_nodes[node]["name"] = label
            raw_nodes[node]["leaf_id"] = len(leaf_names)
            leaf_names.append(label)
            raw_nodes[node]["length"] = parse_length()
        return node

    root = parse_subtree(None)
    if pos >= len(s) or s[pos] != ";":
        raise NewickError("expected ';'", pos)
    if pos != len(s) - 1:
        raise NewickError("trailing characters after ';'", pos + 1)
    if len(leaf_names) < 2:
        raise NewickError("tree must have at least 2 leaves", 0)
    return _finalize(leaf_names, raw_nodes, root)


@dataclass
class NodeCounts:
    """Per-sample child count vectors and totals for one internal node."""

    node: int
    child_counts: np.ndarray  # (n_samples, k) with k = number of children
    totals: np.ndarray        # (n_samples,)


def node_totals_matrix(tree: PhyloTree, counts: np.ndarray) -> np.ndarray:
    """(n_samples, n_nodes) totals: leaf columns copied, internals summed
    bottom-up in a single pass."""
    n = counts.shape[0]
    totals = np.zeros((n, len(tree.nodes)), dtype=np.int64)
    totals[:, :tree.n_leaves] = counts
    for i in reversed(tree.internal_order):
        totals[:, i] = sum(totals[:, c] for c in tree.children(i))
    return totals


def aggregate_counts(tree: PhyloTree, table: CountTable) -> list[NodeCounts]:
    """Aggregate OTU counts to each internal node's child count vectors.

    Table categories must match the tree's leaf names (order-insensitive).
    """
    missing = set(table.categories) ^ set(tree.leaf_names)
    if len(table.categories) != tree.n_leaves or missing:
        unmatched = sorted(missing)
        raise ValueError(f"OTU names do not match tree leaves: {unmatched}")
    col_of = {name: j for j, name in enumerate(table.categories)}
    ordered = table.counts[:, [col_of[name] for name in tree.leaf_names]]
    totals = node_totals_matrix(tree, ordered)
    out = []
    for i in tree.internal_order:
        kids = tree.children(i)
        out.append(NodeCounts(i, totals[:, kids].copy(), totals[:, i].copy()))
    return out


@dataclass
class TripletSet:
    """Scan windows: ordered (parent, middle, child) internal-node triples.

    ``neighbor_sets[i]`` lists the earlier triplets sharing exactly two
    nodes with triplet i; on a binary tree there are at most two and the
    shared pair is always (parent, middle).
    """

    triplets: list[tuple[int, int, int]]
    neighbor_sets: list[tuple[int, ...]]

    def __len__(self) -> int:
        return len(self.triplets)

    def node_set(self, i: int) -> frozenset[int]:
        return frozenset(self.triplets[i])

    @property
    def covered_nodes(self) -> set[int]:
        out: set[int] = set()
        for t in self.triplets:
            out.update(t)
        return out

    def as_index_array(self) -> np.ndarray:
        return np.asarray(self.triplets, dtype=np.int64)


def enumerate_triplets(tree: PhyloTree) -> TripletSet:
    """All (parent, middle, child) windows of consecutive internal nodes.

    Ordered by preorder position of the middle node, ties broken by child
    index, so a triplet whose middle node is nested inside another's always
    comes later.  Returns an empty set when no internal node has both an
    internal parent and an internal child.
    """
    triplets: list[tuple[int, int, int]] = []
    for mid in tree.internal_order:
        parent = tree.parent(mid)
        if parent is None:
            continue
        for child in tree.children(mid):
            if tree.is_internal(child):
                triplets.append((parent, mid, child))
    sets = [frozenset(t) for t in triplets]
    neighbor_sets = []
    for i in range(len(triplets)):
        neighbor_sets.append(tuple(
            j for j in range(i) if len(sets[i] & sets[j]) == 2))
    return TripletSet(triplets, neighbor_sets)


def read_taxonomy_tsv(path) -> dict[str, list[str | None]]:
    """Read a taxonomy TSV with columns otu_id, kingdom..species.

    Empty cells mean missing.  Returns otu -> list of 7 rank values.
    """
    taxonomy: dict[str, list[str | None]] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        expected = ["otu_id", *TAXONOMY_RANKS]
        if [h.strip().lower() for h in header] != expected:
            raise ValueError(f"taxonomy header must be {expected}, got {header}")
        for line in fh:
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            parts += [""] * (len(expected) - len(parts))
            taxonomy[parts[0]] = [p.strip() or None for p in parts[1:len(expected)]]
    return taxonomy


def label_internal_taxa(tree: PhyloTree, taxonomy: dict[str, list[str | None]]
                        ) -> dict[int, tuple[str, str]]:
    """Label each internal node with the finest rank on which all of its
    descendant OTUs with non-missing taxa agree.

    Starting from kingdom, the rank is lowered while agreement holds among
    the OTUs that have a value at that rank.  Nodes whose descendants carry
    no taxonomy at all map to ("", "unclassified").
    """
    labels: dict[int, tuple[str, str]] = {}
    for i in tree.internal_order:
        otus = [tree.leaf_names[j] for j in tree.nodes[i].leaf_set]
        best: tuple[str, str] | None = None
        for r, rank in enumerate(TAXONOMY_RANKS):
            values = {taxonomy[o][r] for o in otus
                      if o in taxonomy and taxonomy[o][r] is not None}
            if len(values) != 1:
                break
            best = (rank, values.pop())
        labels[i] = best if best is not None else ("", UNCLASSIFIED)
    return labels


def group_by_rank(table: CountTable, taxonomy: dict[str, list[str | None]],
                  rank: str) -> CountTable:
    """Sum OTU columns into groups sharing the same taxon at ``rank``.

    All OTUs with missing taxa at the rank fall into one "unclassified"
    column, placed last.
    """
    if rank not in TAXONOMY_RANKS:
        raise ValueError(f"unknown rank {rank!r}; expected one of {TAXONOMY_RANKS}")
    r = TAXONOMY_RANKS.index(rank)
    assignment = []
    for otu in table.categories:
        value = taxonomy.get(otu, [None] * len(TAXONOMY_RANKS))[r]
        assignment.append(value if value is not None else UNCLASSIFIED)
    names = sorted(set(assignment) - {UNCLASSIFIED})
    if UNCLASSIFIED in assignment:
        names.append(UNCLASSIFIED)
    col_of = {name: j for j, name in enumerate(names)}
    grouped = np.zeros((table.n_samples, len(names)), dtype=np.int64)
    for j, name in enumerate(assignment):
        grouped[:, col_of[name]] += table.counts[:, j]
    return CountTable(list(table.sample_ids), names, grouped)
