"""Experiment harness: simulate drafting against recorded references.

A dataset is a JSONL file of ``{"prompt": [...], "reference": [...]}``
records.  The teacher-forced oracle replays the reference as the greedy
next token at each position, which makes simulated acceptance exactly
what a greedy target model that produced that reference would accept,
without running a model.  Reports count steps, emitted tokens, and
host-side retrieval time (source queries + fusion + flattening).
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from time import perf_counter
from typing import Iterable, Sequence

from .datastore import Datastore
from .draft import FlattenedDraft, GenerationSession, pack_mask
from .fusion import FusionConfig

SOURCE_MODES = ("both", "datastore", "input")

CURVE_HEADER = "s_q,mean_accepted,retrieval_ms_per_step"

# Returned for positions past the reference end; outside every real
# vocabulary, so it can never match a draft token.  It can surface as a
# final-step bonus token, which truncation then drops.
EXHAUSTED_TOKEN = 0xFFFFFFFF


@dataclass
class SimRecord:
    prompt: list[int]
    reference: list[int]

    def __post_init__(self) -> None:
        self.prompt = [int(t) for t in self.prompt]
        self.reference = [int(t) for t in self.reference]
        if not self.prompt:
            raise ValueError("record prompt must be non-empty")
        if not self.reference:
            raise ValueError("record reference must be non-empty")


class TeacherForcedOracle:
    """Oracle that replays a fixed reference continuation of a prompt.

    The prediction for a context is the reference token at position
    ``len(context) - len(prompt)``; past the end it returns
    ``EXHAUSTED_TOKEN``.
    """

    def __init__(self, prompt: Sequence[int], reference: Sequence[int]) -> None:
        self._prompt_len = len(prompt)
        self._reference = [int(t) for t in reference]

    def next(self, context: Sequence[int]) -> int:
        i = len(context) - self._prompt_len
        if i < 0:
            raise ValueError("context shorter than the prompt")
        if i < len(self._reference):
            return self._reference[i]
        return EXHAUSTED_TOKEN


@dataclass
class RecordStats:
    index: int
    steps: int
    tokens_emitted: int
    per_step_tokens: list[int]
    retrieval_seconds: float

    @property
    def mean_accepted_per_step(self) -> float:
        return self.tokens_emitted / self.steps


@dataclass
class SimulationReport:
    config: FusionConfig
    sources: str
    records: list[RecordStats]

    @property
    def steps(self) -> int:
        return sum(r.steps for r in self.records)

    @property
    def tokens_emitted(self) -> int:
        return sum(r.tokens_emitted for r in self.records)

    @property
    def mean_accepted_per_step(self) -> float:
        return self.tokens_emitted / self.steps

    @property
    def retrieval_seconds_total(self) -> float:
        return sum(r.retrieval_seconds for r in self.records)

    @property
    def retrieval_ms_per_step(self) -> float:
        return 1000.0 * self.retrieval_seconds_total / self.steps

    def deterministic_dict(self) -> dict:
        """Everything except wall-clock timing, for exact comparisons."""
        return {
            "config": self.config.to_kv(),
            "sources": self.sources,
            "records": [
                {
                    "index": r.index,
                    "steps": r.steps,
                    "tokens_emitted": r.tokens_emitted,
                    "per_step_tokens": list(r.per_step_tokens),
                }
                for r in self.records
            ],
            "aggregate": {
                "steps": self.steps,
                "tokens_emitted": self.tokens_emitted,
                "mean_accepted_per_step": self.mean_accepted_per_step,
            },
        }

    def to_dict(self) -> dict:
        out = self.deterministic_dict()
        out["aggregate"]["retrieval_seconds_total"] = self.retrieval_seconds_total
        out["aggregate"]["retrieval_ms_per_step"] = self.retrieval_ms_per_step
        for entry, r in zip(out["records"], self.records):
            entry["retrieval_seconds"] = r.retrieval_seconds
        return out


def load_dataset(path: str | os.PathLike) -> list[SimRecord]:
    records: list[SimRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or "prompt" not in obj or "reference" not in obj:
                raise ValueError(f"{path}: line {lineno}: expected keys 'prompt' and 'reference'")
            try:
                records.append(SimRecord(obj["prompt"], obj["reference"]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return records


def write_dataset(path: str | os.PathLike, records: Iterable[SimRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"prompt": rec.prompt, "reference": rec.reference}) + "\n")


def _source_flags(sources: str) -> tuple[bool, bool]:
    if sources not in SOURCE_MODES:
        raise ValueError(f"sources must be one of {SOURCE_MODES}, got {sources!r}")
    return sources in ("both", "datastore"), sources in ("both", "input")


def run_record(
    index: int,
    record: SimRecord,
    datastore: Datastore | None,
    cfg: FusionConfig,
    sources: str = "both",
    separator: int | None = None,
) -> RecordStats:
    """Simulate one record to the end of its reference.

    The final step may overshoot the reference; only tokens up to the
    reference end are counted, and that partial step still counts as one.
    """
    use_ds, use_in = _source_flags(sources)
    session = GenerationSession.start(
        datastore, record.prompt, cfg, separator=separator,
        use_datastore=use_ds, use_input=use_in,
    )
    oracle = TeacherForcedOracle(record.prompt, record.reference)
    target_len = len(record.prompt) + len(record.reference)
    per_step: list[int] = []
    while len(session.sequence) < target_len:
        result = session.step(oracle)
        emitted = result.tokens_emitted
        overshoot = len(session.sequence) - target_len
        if overshoot > 0:
            del session.sequence[target_len:]
            emitted -= overshoot
        per_step.append(emitted)
    assert session.sequence == record.prompt + record.reference, (
        "speculative output diverged from the reference"
    )
    return RecordStats(
        index=index,
        steps=len(per_step),
        tokens_emitted=sum(per_step),
        per_step_tokens=per_step,
        retrieval_seconds=session.retrieval_seconds,
    )


def simulate(
    dataset: Sequence[SimRecord],
    datastore: Datastore | None,
    cfg: FusionConfig,
    sources: str = "both",
    separator: int | None = None,
    threads: int = 1,
) -> SimulationReport:
    """Simulate every record; results are independent of ``threads``."""
    records = list(dataset)
    if not records:
        raise ValueError("empty dataset")
    if threads <= 1:
        stats = [
            run_record(i, rec, datastore, cfg, sources, separator)
            for i, rec in enumerate(records)
        ]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(
                pool.map(
                    lambda pair: run_record(pair[0], pair[1], datastore, cfg, sources, separator),
                    enumerate(records),
                )
            )
    return SimulationReport(cfg, sources, stats)


def sweep(
    dataset: Sequence[SimRecord],
    datastore: Datastore | None,
    base_cfg: FusionConfig,
    s_q_values: Sequence[int],
    sources: str = "both",
    separator: int | None = None,
    threads: int = 1,
) -> dict[int, SimulationReport]:
    """Simulate at several speculation lengths (``dec_len`` replaced per point).

    Other knobs, including ``branch_len``, are taken from ``base_cfg`` so
    the swept configurations are nested.
    """
    out: dict[int, SimulationReport] = {}
    for s in s_q_values:
        cfg = replace(base_cfg, dec_len=int(s))
        out[int(s)] = simulate(dataset, datastore, cfg, sources, separator, threads)
    return out


def acceptance_curve(reports: dict[int, SimulationReport]) -> dict[int, float]:
    return {s: rep.mean_accepted_per_step for s, rep in reports.items()}


def write_curve_csv(path: str | os.PathLike, reports: dict[int, SimulationReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CURVE_HEADER + "\n")
        for s in sorted(reports):
            rep = reports[s]
            fh.write(f"{s},{rep.mean_accepted_per_step!r},{rep.retrieval_ms_per_step!r}\n")


def read_accept_curve(path: str | os.PathLike) -> dict[int, float]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines or lines[0] != CURVE_HEADER:
        raise ValueError(f"{path}: expected header {CURVE_HEADER!r}")
    curve: dict[int, float] = {}
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"{path}: line {lineno}: expected 3 columns, got {len(parts)}")
        curve[int(parts[0])] = float(parts[1])
    return curve


# ---------------------------------------------------------------------------
# Retrieval benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchRow:
    batch_size: int
    threads: int
    repeat: int
    seconds: float

    @property
    def ms_per_request(self) -> float:
        return 1000.0 * self.seconds / self.batch_size


@dataclass
class BenchReport:
    rows: list[BenchRow]
    digests: dict[tuple[int, int], str]

    def digest_by_batch(self) -> dict[int, set[str]]:
        out: dict[int, set[str]] = {}
        for (batch, _), digest in self.digests.items():
            out.setdefault(batch, set()).add(digest)
        return out


def draft_digest(drafts: Sequence[FlattenedDraft]) -> str:
    """Order-sensitive fingerprint of a batch of flattened drafts."""
    h = hashlib.sha256()
    for flat in drafts:
        h.update(json.dumps([flat.tokens, flat.parents, flat.depths]).encode())
        h.update(pack_mask(flat.mask))
    return h.hexdigest()


def bench_retrieval(
    datastore: Datastore | None,
    contexts: Sequence[Sequence[int]],
    cfg: FusionConfig,
    batch_sizes: Sequence[int],
    thread_counts: Sequence[int],
    repeats: int = 3,
    sources: str = "both",
    separator: int | None = None,
) -> BenchReport:
    """Time batched drafting (retrieve + fuse + flatten, no verification).

    Requests are cycled from ``contexts`` to fill each batch.  Drafting
    mutates no session state, so sessions are built once per batch and the
    produced drafts must be identical across thread counts; per-batch
    digests make that checkable.
    """
    if not contexts:
        raise ValueError("empty workload")
    use_ds, use_in = _source_flags(sources)
    rows: list[BenchRow] = []
    digests: dict[tuple[int, int], str] = {}
    for batch in batch_sizes:
        if batch < 1:
            raise ValueError(f"batch size must be >= 1, got {batch}")
        sessions = [
            GenerationSession.start(
                datastore, contexts[i % len(contexts)], cfg, separator=separator,
                use_datastore=use_ds, use_input=use_in,
            )
            for i in range(batch)
        ]
        for threads in thread_counts:
            if threads < 1:
                raise ValueError(f"thread count must be >= 1, got {threads}")
            drafts: list[FlattenedDraft] = []
            for rep in range(repeats):
                t0 = perf_counter()
                if threads == 1:
                    drafts = [s.propose() for s in sessions]
                else:
                    with ThreadPoolExecutor(max_workers=threads) as pool:
                        drafts = list(pool.map(lambda s: s.propose(), sessions))
                rows.append(BenchRow(batch, threads, rep, perf_counter() - t0))
            digests[(batch, threads)] = draft_digest(drafts)
    return BenchReport(rows, digests)
