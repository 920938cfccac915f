"""Draft flattening, tree-attention masks, and greedy verification.

A draft tree is flattened depth-first into parallel arrays so a target
model can score every candidate in one forward pass; the accompanying
square boolean mask lets each flattened position attend exactly to its
ancestors and itself.  Verification walks the tree greedily: a child is
accepted while its token equals the oracle's prediction at the current
node, and the prediction at the deepest accepted node is emitted on top
as a bonus, so every step emits at least one token and the output is
identical to plain one-token-at-a-time decoding with the same oracle.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from time import perf_counter
from typing import Protocol, Sequence

import numpy as np

from .datastore import Datastore, DatastoreQueryConfig
from .fusion import DraftTree, FusionConfig, merge
from .input_cache import InputCache
from .trees import ContinuationTree


class Oracle(Protocol):
    """Anything that can name the greedy next token for a context."""

    def next(self, context: Sequence[int]) -> int: ...


@dataclass
class AcceptResult:
    """Outcome of verifying one draft: the chain of accepted node indices
    (root excluded) plus the bonus token predicted after it."""

    accepted_path: list[int]
    bonus_token: int

    @property
    def tokens_emitted(self) -> int:
        return len(self.accepted_path) + 1


@dataclass
class FlattenedDraft:
    """Depth-first arrays for one draft tree.

    ``parents[0]`` is the sentinel -1; every other parent index precedes
    its child.  ``mask[i, j]`` is true iff j is i or one of i's ancestors,
    so row i carries ``depths[i] + 1`` true entries.
    """

    tokens: list[int]
    parents: list[int]
    depths: list[int]
    mask: np.ndarray

    @property
    def s_q(self) -> int:
        return len(self.tokens)


def flatten(tree: DraftTree) -> FlattenedDraft:
    """Flatten depth-first, visiting children in insertion order."""
    tokens = [tree.root.token]
    parents = [-1]
    depths = [0]
    stack = [(child, 0) for child in reversed(list(tree.root.children.values()))]
    while stack:
        node, parent_idx = stack.pop()
        idx = len(tokens)
        tokens.append(node.token)
        parents.append(parent_idx)
        depths.append(depths[parent_idx] + 1)
        stack.extend((child, idx) for child in reversed(list(node.children.values())))
    n = len(tokens)
    mask = np.zeros((n, n), dtype=bool)
    mask[0, 0] = True
    for i in range(1, n):
        mask[i] = mask[parents[i]]
        mask[i, i] = True
    return FlattenedDraft(tokens, parents, depths, mask)


def pack_mask(mask: np.ndarray) -> bytes:
    """Row-major bit-packed mask: u64 row count, then LSB-first bits."""
    n = mask.shape[0]
    bits = np.packbits(mask.reshape(-1).astype(np.uint8), bitorder="little")
    return struct.pack("<Q", n) + bits.tobytes()


def unpack_mask(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise ValueError(f"truncated mask: {len(data)} bytes is shorter than the header")
    (n,) = struct.unpack_from("<Q", data)
    need = 8 + (n * n + 7) // 8
    if len(data) != need:
        raise ValueError(f"truncated mask: expected {need} bytes for {n} rows, got {len(data)}")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=8), count=n * n, bitorder="little")
    return bits.reshape(n, n).astype(bool)


def mask_debug_json(mask: np.ndarray) -> str:
    """Readable JSON form: per row, the ancestor-or-self column indices."""
    n = mask.shape[0]
    rows = [sorted(int(j) for j in np.nonzero(mask[i])[0]) for i in range(n)]
    return json.dumps({"size": n, "ancestors": rows})


def verify_greedy(draft: FlattenedDraft, node_predictions: Sequence[int]) -> AcceptResult:
    """Accept the unique chain of draft tokens matching the predictions.

    ``node_predictions[i]`` is the oracle's next token at flattened node i.
    Starting at the root, while the current node has a child carrying the
    predicted token, that child is accepted and becomes current.  The
    prediction at the final node is the bonus token.
    """
    predictions = [int(p) for p in node_predictions]
    if len(predictions) != draft.s_q:
        raise ValueError(
            f"length mismatch: {len(predictions)} predictions for {draft.s_q} draft nodes"
        )
    children: list[dict[int, int]] = [{} for _ in range(draft.s_q)]
    for i in range(1, draft.s_q):
        children[draft.parents[i]].setdefault(draft.tokens[i], i)
    path: list[int] = []
    current = 0
    while True:
        child = children[current].get(predictions[current])
        if child is None:
            break
        path.append(child)
        current = child
    return AcceptResult(path, predictions[current])


@dataclass
class GenerationSession:
    """State for one request: the sequence so far plus both retrieval sources."""

    datastore: Datastore | None
    cache: InputCache
    cfg: FusionConfig
    query_cfg: DatastoreQueryConfig
    sequence: list[int]
    use_datastore: bool = True
    use_input: bool = True
    retrieval_seconds: float = 0.0
    steps: int = 0
    _empty_inputs: list[ContinuationTree] = field(default_factory=list, repr=False)

    @classmethod
    def start(
        cls,
        datastore: Datastore | None,
        prompt: Sequence[int],
        cfg: FusionConfig,
        separator: int | None = None,
        use_datastore: bool = True,
        use_input: bool = True,
    ) -> "GenerationSession":
        prompt = [int(t) for t in prompt]
        if not prompt:
            raise ValueError("empty prompt: the draft root is the last context token")
        if use_datastore and datastore is None:
            raise ValueError("use_datastore=True requires a datastore")
        cache = InputCache(prompt, cfg.P, cfg.input_branch_len)
        return cls(
            datastore=datastore,
            cache=cache,
            cfg=cfg,
            query_cfg=cfg.query_config(separator),
            sequence=list(prompt),
            use_datastore=use_datastore,
            use_input=use_input,
            _empty_inputs=[ContinuationTree() for _ in range(cfg.P)],
        )

    def propose(self) -> FlattenedDraft:
        """Retrieve, fuse, and flatten one draft for the current sequence.

        Only this part is counted as retrieval time; verification and the
        oracle are timed separately by callers that care.
        """
        t0 = perf_counter()
        cfg = self.cfg
        prefix = self.sequence[-min(cfg.P, len(self.sequence)):]
        if self.use_datastore:
            ds_tree = self.datastore.get_conts(prefix, self.query_cfg)  # type: ignore[union-attr]
        else:
            ds_tree = ContinuationTree()
        input_trees = self.cache.get_conts() if self.use_input else self._empty_inputs
        draft_tree = merge(ds_tree, input_trees, cfg, self.sequence[-1])
        flat = flatten(draft_tree)
        self.retrieval_seconds += perf_counter() - t0
        return flat

    def step(self, oracle: Oracle) -> AcceptResult:
        """One speculation round: propose, verify, append the emitted tokens."""
        flat = self.propose()
        contexts: list[list[int]] = [self.sequence]
        predictions = [int(oracle.next(self.sequence))]
        for i in range(1, flat.s_q):
            ctx = contexts[flat.parents[i]] + [flat.tokens[i]]
            contexts.append(ctx)
            predictions.append(int(oracle.next(ctx)))
        result = verify_greedy(flat, predictions)
        emitted = [flat.tokens[i] for i in result.accepted_path] + [result.bonus_token]
        self.sequence.extend(emitted)
        self.cache.append(emitted)
        self.steps += 1
        return result
