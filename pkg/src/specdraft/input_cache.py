"""Per-request cache of the live sequence (prompt plus generated tokens).

Generated text frequently re-uses spans of its own context, so each
request keeps a small trie over every sliding window of the sequence, up
to ``max_prefix_len + input_branch_len`` tokens long, with exact
occurrence counts.  Appending a token touches one node per active window,
so the amortized cost per appended token is proportional to the window
length, and querying never rescans the sequence.
"""

from __future__ import annotations

from typing import Sequence

from .trees import ContinuationNode, ContinuationTree


class InputCache:
    def __init__(
        self,
        prompt: Sequence[int] = (),
        max_prefix_len: int = 4,
        input_branch_len: int = 8,
    ) -> None:
        if max_prefix_len < 1:
            raise ValueError(f"max_prefix_len must be >= 1, got {max_prefix_len}")
        if input_branch_len < 1:
            raise ValueError(f"input_branch_len must be >= 1, got {input_branch_len}")
        self.max_prefix_len = max_prefix_len
        self.input_branch_len = input_branch_len
        self.window = max_prefix_len + input_branch_len
        self.sequence: list[int] = []
        self._root = ContinuationNode(-1)
        # _active[k] is the trie node for the last k+1 tokens of the sequence.
        self._active: list[ContinuationNode] = []
        self.append(prompt)

    def __len__(self) -> int:
        return len(self.sequence)

    def append(self, tokens: Sequence[int]) -> None:
        """Extend the sequence; equivalent to rebuilding from scratch."""
        for tok in tokens:
            self._push(int(tok))

    def _push(self, tok: int) -> None:
        prev = self._active
        nxt: list[ContinuationNode] = []
        node = self._root.children.get(tok)
        if node is None:
            node = ContinuationNode(tok)
            self._root.children[tok] = node
        node.count += 1
        nxt.append(node)
        for parent in prev[: self.window - 1]:
            child = parent.children.get(tok)
            if child is None:
                child = ContinuationNode(tok)
                parent.children[tok] = child
            child.count += 1
            nxt.append(child)
        self._active = nxt
        self.sequence.append(tok)

    def node_count(self) -> int:
        total = 0
        stack = list(self._root.children.values())
        while stack:
            node = stack.pop()
            total += 1
            stack.extend(node.children.values())
        return total

    def count(self, ngram: Sequence[int]) -> int:
        """Exact number of windows of the sequence equal to ``ngram``."""
        ngram = [int(t) for t in ngram]
        if not ngram:
            raise ValueError("ngram must be non-empty")
        if len(ngram) > self.window:
            raise ValueError(f"ngram longer than window ({len(ngram)} > {self.window})")
        node: ContinuationNode | None = self._root
        for tok in ngram:
            node = node.children.get(tok)  # type: ignore[union-attr]
            if node is None:
                return 0
        return node.count

    def get_conts(self) -> list[ContinuationTree]:
        """One continuation tree per prefix length ``p = 1 .. max_prefix_len``.

        Tree ``p`` describes what followed earlier occurrences of the last
        ``p`` tokens of the sequence, up to ``input_branch_len`` tokens deep,
        with exact occurrence counts.  The trailing occurrence itself (the
        sequence end, which has no continuation) is not counted.  Prefix
        lengths with no earlier occurrence yield empty trees.
        """
        if not self.sequence:
            raise ValueError("empty sequence")
        trees: list[ContinuationTree] = []
        for p in range(1, self.max_prefix_len + 1):
            tree = ContinuationTree()
            if p <= len(self.sequence):
                node: ContinuationNode | None = self._root
                for tok in self.sequence[-p:]:
                    node = node.children.get(tok)  # type: ignore[union-attr]
                    if node is None:  # pragma: no cover - trailing window always present
                        break
                if node is not None and node.count > 1:
                    tree.root_count = node.count - 1
                    for tok, child in node.children.items():
                        tree.children[tok] = _copy_subtree(child, self.input_branch_len)
            trees.append(tree)
        return trees


def _copy_subtree(node: ContinuationNode, depth_left: int) -> ContinuationNode:
    out = ContinuationNode(node.token, node.count)
    if depth_left > 1:
        for tok, child in node.children.items():
            out.children[tok] = _copy_subtree(child, depth_left - 1)
    return out
