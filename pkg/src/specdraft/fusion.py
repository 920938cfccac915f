"""Fusing per-source continuation trees into one bounded draft tree.

Every source node is scored by the product of its path probability (the
chain of count ratios from that source's root) and a per-source discount,
then the highest-scoring candidates are transplanted into a single draft
tree by best-first expansion until the node budget ``dec_len`` is reached.
Input-cache candidates are dampened relative to datastore ones because a
match inside the request tends to overstate how predictable the next
tokens are.
"""

from __future__ import annotations

import heapq
import itertools
import math
import os
from dataclasses import dataclass, fields, replace
from typing import Iterable, Mapping, Sequence

from . import kvconfig
from .datastore import Datastore, DatastoreQueryConfig
from .trees import ContinuationTree

_INT_KEYS = ("P", "dec_len", "branch_len", "input_branch_len", "M", "T")
_FLOAT_KEYS = ("alpha", "beta", "gamma_ds", "gamma_in")


@dataclass(frozen=True)
class FusionConfig:
    """Drafting knobs for one generation session.

    P                 longest prefix matched against either source
    dec_len           draft-tree node budget, root included; 1 disables
                      speculation entirely
    branch_len        datastore continuation length; defaults to
                      ``min(8, dec_len - 1)``
    input_branch_len  input-cache continuation length
    M                 datastore sample cap per prefix length
    T                 datastore continuation threshold before the prefix
                      is shortened
    alpha             input-source scale (0 ranks input below everything)
    beta              decay per token of prefix shortfall for input matches
    gamma_ds          datastore decay per draft depth
    gamma_in          input decay per draft depth
    """

    P: int = 4
    dec_len: int = 30
    branch_len: int | None = None
    input_branch_len: int = 8
    M: int = 100
    T: int = 16
    alpha: float = 0.8
    beta: float = 0.8
    gamma_ds: float = 1.0
    gamma_in: float = 0.95

    def __post_init__(self) -> None:
        if self.branch_len is None:
            object.__setattr__(self, "branch_len", max(1, min(8, self.dec_len - 1)))
        if self.P < 1:
            raise ValueError(f"P must be >= 1, got {self.P}")
        if self.dec_len < 1:
            raise ValueError(f"dec_len must be >= 1, got {self.dec_len}")
        if self.branch_len < 1:
            raise ValueError(f"branch_len must be >= 1, got {self.branch_len}")
        if self.input_branch_len < 1:
            raise ValueError(f"input_branch_len must be >= 1, got {self.input_branch_len}")
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        for name in ("beta", "gamma_ds", "gamma_in"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {value}")

    def query_config(self, separator: int | None = None) -> DatastoreQueryConfig:
        return DatastoreQueryConfig(
            max_prefix_len=self.P,
            sample_cap=self.M,
            min_continuations=self.T,
            branch_len=self.branch_len,
            separator=separator,
        )

    def to_kv(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_file(self, path: str | os.PathLike) -> None:
        kvconfig.write_kv(path, self.to_kv())

    @classmethod
    def from_kv(cls, items: Mapping[str, str], base: "FusionConfig | None" = None) -> "FusionConfig":
        """Build from string key-values; absent keys keep ``base`` (or default) values."""
        values: dict[str, object] = {}
        for key, raw in items.items():
            if key in _INT_KEYS:
                values[key] = int(raw)
            elif key in _FLOAT_KEYS:
                values[key] = float(raw)
            else:
                raise ValueError(f"unknown config key {key!r}")
        if base is None:
            return cls(**values)
        return replace(base, **values)

    @classmethod
    def from_file(cls, path: str | os.PathLike, base: "FusionConfig | None" = None) -> "FusionConfig":
        return cls.from_kv(kvconfig.read_kv(path), base=base)


@dataclass(frozen=True)
class Source:
    """Provenance of a draft candidate: the datastore, or the input cache
    via a prefix match of length ``prefix_len``."""

    kind: str
    prefix_len: int | None = None

    DATASTORE = "datastore"
    INPUT = "input"

    def __post_init__(self) -> None:
        if self.kind == self.DATASTORE:
            if self.prefix_len is not None:
                raise ValueError("datastore source carries no prefix_len")
        elif self.kind == self.INPUT:
            if self.prefix_len is None or self.prefix_len < 1:
                raise ValueError(f"input source needs prefix_len >= 1, got {self.prefix_len}")
        else:
            raise ValueError(f"unknown source kind {self.kind!r}")


DATASTORE_SOURCE = Source(Source.DATASTORE)


def discount(cfg: FusionConfig, source: Source, depth: int) -> float:
    """Multiplier applied to a candidate's path probability.

    Datastore candidates decay only with draft depth.  Input candidates
    are additionally scaled by ``alpha`` and by ``beta`` for every token
    the matched prefix falls short of ``P``, so shorter (less specific)
    matches rank lower.  ``depth`` counts from 1 at the root's children.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if source.kind == Source.DATASTORE:
        return cfg.gamma_ds ** (depth - 1)
    if source.prefix_len > cfg.P:  # type: ignore[operator]
        raise ValueError(f"prefix_len {source.prefix_len} exceeds P={cfg.P}")
    return cfg.alpha * cfg.beta ** (cfg.P - source.prefix_len) * cfg.gamma_in ** (depth - 1)


class DraftNode:
    __slots__ = ("token", "source", "priority", "parent", "children")

    def __init__(
        self,
        token: int,
        source: Source | None,
        priority: float,
        parent: "DraftNode | None",
    ) -> None:
        self.token = token
        self.source = source
        self.priority = priority
        self.parent = parent
        self.children: dict[int, DraftNode] = {}

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"DraftNode(token={self.token}, priority={self.priority:.4g}, children={len(self.children)})"


class DraftTree:
    """Candidate tokens to verify, rooted at the last accepted token."""

    def __init__(self, root_token: int) -> None:
        self.root = DraftNode(int(root_token), None, math.inf, None)
        self.size = 1

    def insert(self, token: int, parent: DraftNode, source: Source, priority: float) -> tuple[DraftNode, bool]:
        """Add ``token`` under ``parent`` unless already present.

        Duplicates keep the first-inserted node (and its source/priority);
        the caller still expands the duplicate's children so overlapping
        source subtrees merge.
        """
        existing = parent.children.get(token)
        if existing is not None:
            return existing, False
        node = DraftNode(token, source, priority, parent)
        parent.children[token] = node
        self.size += 1
        return node, True

    def to_shape(self) -> tuple:
        """``(token, [child shapes...])`` nesting in insertion order, for tests."""

        def render(node: DraftNode) -> tuple:
            return (node.token, [render(c) for c in node.children.values()])

        return render(self.root)


def merge(
    datastore_tree: ContinuationTree,
    input_trees: Sequence[ContinuationTree],
    cfg: FusionConfig,
    root_token: int,
) -> DraftTree:
    """Best-first fusion of the source trees into one draft tree.

    The queue is seeded with every source root's children and repeatedly
    pops the highest-priority candidate, inserting it under its recorded
    draft parent, then pushes the candidate's source children.  Expansion
    stops when the queue empties or the tree reaches ``dec_len`` nodes.
    Ties break toward smaller depth, then source order (datastore first,
    then input matches from longest to shortest prefix), then insertion
    order, making the result fully deterministic.

    ``input_trees[i]`` must be the tree for prefix length ``i + 1``.
    """
    if len(input_trees) > cfg.P:
        raise ValueError(f"got {len(input_trees)} input trees for P={cfg.P}")
    tree = DraftTree(root_token)
    heap: list[tuple] = []
    ticket = itertools.count()

    def push(node, source, rank, depth, path_prob, parent) -> None:
        priority = path_prob * discount(cfg, source, depth)
        heapq.heappush(
            heap, (-priority, depth, rank, next(ticket), node, path_prob, parent, source)
        )

    def seed(src_tree: ContinuationTree, source: Source, rank: int) -> None:
        if src_tree.is_empty:
            return
        root_count = src_tree.root_count
        for child in src_tree.children.values():
            push(child, source, rank, 1, child.count / root_count, tree.root)

    seed(datastore_tree, DATASTORE_SOURCE, 0)
    for i in range(len(input_trees) - 1, -1, -1):
        p = i + 1
        seed(input_trees[i], Source(Source.INPUT, p), cfg.P - p + 1)

    last_priority = math.inf
    while heap and tree.size < cfg.dec_len:
        neg_priority, depth, rank, _, node, path_prob, parent, source = heapq.heappop(heap)
        priority = -neg_priority
        assert priority <= last_priority + 1e-12, "popped priorities must be non-increasing"
        last_priority = priority
        draft_node, _ = tree.insert(node.token, parent, source, priority)
        for child in node.children.values():
            push(child, source, rank, depth + 1, path_prob * (child.count / node.count), draft_node)
    assert tree.size <= cfg.dec_len
    return tree


def calibrate(
    dataset: Sequence,
    datastore: Datastore,
    grid: Iterable[FusionConfig],
    sources: str = "both",
    separator: int | None = None,
) -> FusionConfig:
    """Pick the grid config with the highest simulated mean accepted tokens
    per step; ties keep the earliest grid entry."""
    from .harness import simulate  # deferred: harness builds on this module

    records = list(dataset)
    if not records:
        raise ValueError("empty dataset")
    configs = list(grid)
    if not configs:
        raise ValueError("empty grid")
    best_cfg: FusionConfig | None = None
    best_score = -math.inf
    for cfg in configs:
        report = simulate(records, datastore, cfg, sources=sources, separator=separator)
        if report.mean_accepted_per_step > best_score:
            best_cfg = cfg
            best_score = report.mean_accepted_per_step
    assert best_cfg is not None
    return best_cfg
