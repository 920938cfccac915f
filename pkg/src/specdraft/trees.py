"""Weighted continuation tries shared by the retrieval sources.

Both retrieval sources (the shared-corpus datastore and the per-request
input cache) report their findings as a ``ContinuationTree``: a trie of
tokens observed to follow some matched prefix, with an occurrence count on
every edge.  ``root_count`` is the number of observed continuations of the
prefix; the count of a node is the number of those continuations whose
first tokens spell the path to that node.
"""

from __future__ import annotations

from typing import Iterable, Sequence


class ContinuationNode:
    __slots__ = ("token", "count", "children")

    def __init__(self, token: int, count: int = 0) -> None:
        self.token = token
        self.count = count
        self.children: dict[int, ContinuationNode] = {}

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"ContinuationNode(token={self.token}, count={self.count}, children={len(self.children)})"


class ContinuationTree:
    """Trie of continuations of a matched prefix, weighted by occurrence.

    Invariants kept by construction: every node's count is at least each
    child's count, and the counts of a node's children sum to at most the
    node's own count (continuations may end early).
    """

    __slots__ = ("root_count", "children")

    def __init__(self) -> None:
        self.root_count = 0
        self.children: dict[int, ContinuationNode] = {}

    @property
    def is_empty(self) -> bool:
        return self.root_count == 0

    def add_path(self, tokens: Sequence[int], count: int = 1) -> None:
        """Record one observed continuation spelled by ``tokens``.

        Adds ``count`` to the root and to every node along the path,
        creating nodes as needed.  ``tokens`` must be non-empty.
        """
        if not tokens:
            raise ValueError("continuation path must be non-empty")
        self.root_count += count
        children = self.children
        for tok in tokens:
            tok = int(tok)
            node = children.get(tok)
            if node is None:
                node = ContinuationNode(tok)
                children[tok] = node
            node.count += count
            children = node.children

    def node_count(self) -> int:
        """Number of nodes in the trie (excluding the implicit root)."""
        total = 0
        stack: list[ContinuationNode] = list(self.children.values())
        while stack:
            node = stack.pop()
            total += 1
            stack.extend(node.children.values())
        return total

    def max_depth(self) -> int:
        depth = 0
        stack: list[tuple[ContinuationNode, int]] = [(n, 1) for n in self.children.values()]
        while stack:
            node, d = stack.pop()
            depth = max(depth, d)
            stack.extend((c, d + 1) for c in node.children.values())
        return depth

    def to_counts(self) -> dict:
        """Plain-dict rendering ``{"root_count": r, "children": {...}}`` for tests."""

        def render(node: ContinuationNode) -> dict:
            return {
                "count": node.count,
                "children": {t: render(c) for t, c in node.children.items()},
            }

        return {
            "root_count": self.root_count,
            "children": {t: render(c) for t, c in self.children.items()},
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ContinuationTree):
            return NotImplemented
        return self.to_counts() == other.to_counts()

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"ContinuationTree(root_count={self.root_count}, nodes={self.node_count()})"


def tree_from_paths(paths: Iterable[Sequence[int]]) -> ContinuationTree:
    """Build a tree by adding each path with count 1 (test/tooling helper)."""
    tree = ContinuationTree()
    for path in paths:
        tree.add_path(path)
    return tree
