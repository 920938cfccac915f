"""Suffix-array datastore over a shared token corpus.

The datastore holds one flat stream of ``uint32`` token ids plus a suffix
array over it.  Queries look up the longest usable suffix of the current
sequence (up to ``max_prefix_len`` tokens), take an evenly spaced sample of
the matching corpus positions, and collect the tokens that follow each
match into a :class:`~specdraft.trees.ContinuationTree`.  When a prefix
yields too few continuations, progressively shorter prefixes are queried
and their continuations merged into the same tree by summing edge counts.

On-disk format (all little-endian)::

    bytes 0..3    magic  b"SSSD"
    u32           version (currently 1)
    u32           vocab_size, 0 when undeclared
    u64           n_tokens
    n_tokens*u32  token ids
    n_tokens*u64  suffix array (corpus positions in suffix-sorted order)
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from .trees import ContinuationTree

MAGIC = b"SSSD"
VERSION = 1

_HEADER = struct.Struct("<4sIIQ")


class DatastoreFormatError(ValueError):
    """Raised for malformed datastore files; ``field`` names the bad part."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class DatastoreQueryConfig:
    """Knobs for :meth:`Datastore.get_conts`.

    max_prefix_len
        Longest suffix of the query sequence to match (the search starts
        here and shortens on a miss or a thin result).
    sample_cap
        At most this many matches are sampled per prefix length.
    min_continuations
        Stop shortening the prefix once the tree holds at least this many
        sampled continuations.
    branch_len
        Tokens collected after each match.
    separator
        Optional reserved token id; continuations stop before it.
    """

    max_prefix_len: int = 4
    sample_cap: int = 100
    min_continuations: int = 16
    branch_len: int = 8
    separator: int | None = None

    def __post_init__(self) -> None:
        if self.max_prefix_len < 1:
            raise ValueError(f"max_prefix_len must be >= 1, got {self.max_prefix_len}")
        if self.sample_cap < 1:
            raise ValueError(f"sample_cap must be >= 1, got {self.sample_cap}")
        if self.min_continuations < 1:
            raise ValueError(f"min_continuations must be >= 1, got {self.min_continuations}")
        if self.branch_len < 1:
            raise ValueError(f"branch_len must be >= 1, got {self.branch_len}")


def build_suffix_array(tokens: np.ndarray) -> np.ndarray:
    """Suffix array by prefix doubling (O(n log^2 n) worst case).

    A shorter suffix that is a prefix of a longer one sorts first, which
    the doubling scheme gets by ranking positions past the end below every
    real token.
    """
    n = int(tokens.size)
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    rank = np.unique(tokens, return_inverse=True)[1].astype(np.int64)
    k = 1
    while True:
        second = np.full(n, -1, dtype=np.int64)
        second[: n - k] = rank[k:]
        order = np.lexsort((second, rank))
        first_sorted = rank[order]
        second_sorted = second[order]
        changed = np.empty(n, dtype=bool)
        changed[0] = True
        changed[1:] = (first_sorted[1:] != first_sorted[:-1]) | (
            second_sorted[1:] != second_sorted[:-1]
        )
        new_rank = np.empty(n, dtype=np.int64)
        new_rank[order] = np.cumsum(changed) - 1
        rank = new_rank
        if rank[order[-1]] == n - 1:
            return order.astype(np.int64)
        k *= 2


def sample_range(lo: int, hi: int, cap: int) -> list[int]:
    """Evenly spaced sample of at most ``cap`` indices from ``[lo, hi)``.

    Returns the whole interval when it fits, otherwise the ``cap`` indices
    ``lo + floor(k * (hi - lo) / cap)`` for ``k = 0 .. cap-1`` (sorted and
    duplicate-free because the stride exceeds one).
    """
    if lo > hi:
        raise ValueError(f"invalid interval: lo={lo} > hi={hi}")
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    width = hi - lo
    if width <= cap:
        return list(range(lo, hi))
    return [lo + (k * width) // cap for k in range(cap)]


def _compare_suffix(tokens: np.ndarray, pos: int, prefix: Sequence[int]) -> int:
    """-1/0/+1 for suffix-at-pos vs prefix, over the first len(prefix) tokens.

    A suffix that runs out before the prefix does compares below it.
    """
    n = tokens.shape[0]
    for j, want in enumerate(prefix):
        if pos + j >= n:
            return -1
        have = int(tokens[pos + j])
        if have != want:
            return -1 if have < want else 1
    return 0


@dataclass
class Datastore:
    """Token corpus plus its suffix array."""

    tokens: np.ndarray
    suffix_index: np.ndarray
    vocab_size: int | None = None

    @property
    def n_tokens(self) -> int:
        return int(self.tokens.size)

    def find_range(self, prefix: Sequence[int]) -> tuple[int, int]:
        """Half-open interval ``[lo, hi)`` of suffix-array ranks matching ``prefix``.

        ``hi - lo`` is the number of corpus occurrences; the interval is
        empty when the prefix does not occur.
        """
        prefix = [int(t) for t in prefix]
        if not prefix:
            raise ValueError("prefix must be non-empty")
        sa = self.suffix_index
        toks = self.tokens
        n = sa.shape[0]
        lo, hi = 0, n
        while lo < hi:
            mid = (lo + hi) // 2
            if _compare_suffix(toks, int(sa[mid]), prefix) < 0:
                lo = mid + 1
            else:
                hi = mid
        start = lo
        hi = n
        while lo < hi:
            mid = (lo + hi) // 2
            if _compare_suffix(toks, int(sa[mid]), prefix) <= 0:
                lo = mid + 1
            else:
                hi = mid
        return start, lo

    def get_conts(self, prefix: Sequence[int], cfg: DatastoreQueryConfig) -> ContinuationTree:
        """Continuation tree for the longest usable suffixes of ``prefix``.

        Starting at ``p = min(max_prefix_len, len(prefix))`` and shortening
        to 1, each prefix length contributes up to ``sample_cap`` sampled
        continuations (count 1 each, at most ``branch_len`` tokens, stopping
        before the separator token when one is declared).  Shortening stops
        once the tree holds at least ``min_continuations`` continuations.
        Matches whose continuation is empty contribute nothing.
        """
        prefix = [int(t) for t in prefix]
        if not prefix:
            raise ValueError("prefix must be non-empty")
        tree = ContinuationTree()
        toks = self.tokens
        n = toks.shape[0]
        sep = cfg.separator
        for p in range(min(cfg.max_prefix_len, len(prefix)), 0, -1):
            tail = prefix[-p:]
            lo, hi = self.find_range(tail)
            for r in sample_range(lo, hi, cfg.sample_cap):
                start = int(self.suffix_index[r]) + p
                stop = min(start + cfg.branch_len, n)
                cont: list[int] = []
                for i in range(start, stop):
                    t = int(toks[i])
                    if sep is not None and t == sep:
                        break
                    cont.append(t)
                if cont:
                    tree.add_path(cont)
            if tree.root_count >= cfg.min_continuations:
                break
        return tree

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as fh:
            fh.write(
                _HEADER.pack(MAGIC, VERSION, self.vocab_size or 0, self.n_tokens)
            )
            fh.write(np.ascontiguousarray(self.tokens, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(self.suffix_index, dtype="<u8").tobytes())


def build(corpus: Sequence[int] | np.ndarray, vocab_size: int | None = None) -> Datastore:
    """Index ``corpus`` (one flat token stream) into a datastore."""
    tokens = np.ascontiguousarray(np.asarray(corpus), dtype="<u4")
    if tokens.ndim != 1:
        raise ValueError(f"corpus must be one-dimensional, got shape {tokens.shape}")
    if tokens.size == 0:
        raise ValueError("empty corpus")
    if vocab_size is not None:
        if vocab_size < 1:
            raise ValueError(f"vocab_size must be >= 1, got {vocab_size}")
        top = int(tokens.max())
        if top >= vocab_size:
            raise ValueError(f"token id {top} out of range for vocab_size {vocab_size}")
    return Datastore(tokens, build_suffix_array(tokens), vocab_size)


def _read_exact(fh: BinaryIO, nbytes: int, field: str) -> bytes:
    data = fh.read(nbytes)
    if len(data) != nbytes:
        raise DatastoreFormatError(
            field, f"truncated {field}: expected {nbytes} bytes, got {len(data)}"
        )
    return data


def load(path: str | os.PathLike) -> Datastore:
    """Load a datastore file, validating structure before use."""
    with open(path, "rb") as fh:
        header = _read_exact(fh, _HEADER.size, "header")
        magic, version, vocab_size, n_tokens = _HEADER.unpack(header)
        if magic != MAGIC:
            raise DatastoreFormatError("magic", f"bad magic: expected {MAGIC!r}, got {magic!r}")
        if version != VERSION:
            raise DatastoreFormatError(
                "version", f"unsupported version {version}, expected {VERSION}"
            )
        if n_tokens == 0:
            raise DatastoreFormatError("n_tokens", "n_tokens is zero (empty corpus)")
        tokens = np.frombuffer(_read_exact(fh, 4 * n_tokens, "tokens"), dtype="<u4")
        suffix = np.frombuffer(
            _read_exact(fh, 8 * n_tokens, "suffix_index"), dtype="<u8"
        ).astype(np.int64)
        trailing = fh.read(1)
    if trailing:
        raise DatastoreFormatError("trailer", "trailing bytes after suffix array")
    if suffix.size and int(suffix.max()) >= n_tokens:
        raise DatastoreFormatError(
            "suffix_index", f"suffix position {int(suffix.max())} out of range for {n_tokens} tokens"
        )
    vocab = int(vocab_size) or None
    if vocab is not None and int(tokens.max()) >= vocab:
        raise DatastoreFormatError(
            "tokens", f"token id {int(tokens.max())} out of range for vocab_size {vocab}"
        )
    return Datastore(tokens.copy(), suffix, vocab)


def read_corpus(path: str | os.PathLike) -> np.ndarray:
    """Read a token stream: raw little-endian u32 (``.tok``) or decimal text."""
    path = os.fspath(path)
    if path.endswith(".tok"):
        data = np.fromfile(path, dtype="<u4")
        return data
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    fields = text.split()
    out = np.empty(len(fields), dtype="<u4")
    for i, field in enumerate(fields):
        try:
            value = int(field)
        except ValueError as exc:
            raise ValueError(f"{path}: token #{i + 1}: not a decimal integer: {field!r}") from exc
        if not 0 <= value < 2**32:
            raise ValueError(f"{path}: token #{i + 1}: {value} outside u32 range")
        out[i] = value
    return out
