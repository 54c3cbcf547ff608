"""Batch orchestration: one-time prepopulation, daily delta refresh and weekly embedding refresh.

Opportunities are independent, so each run partitions its work across a
pool of worker processes.  Shared state (catalog, embedding view, prompts)
is read-only for the whole run; workers inherit it by fork and only ship
results back.  Output is sorted by opportunity id, so it does not depend on
the worker count.
"""

from __future__ import annotations

import io
import json
import logging
import multiprocessing as mp
import os
import struct
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .catalog import CatalogSnapshot, ContentDoc, Opportunity
from .config import RunConfig, make_embedder, make_scorer
from .embedding import EmbeddingProvider
from .errors import EmptyPrompt, RunFailed, StoreFormatError
from .prompts import FeatureGroup, Prompt, build_content_prompt, build_opportunity_prompt, stable_hash64
from .rerank import CrossScorer, Recommendation, rerank
from .retrieval import CandidateSet, RetrievalIndex, retrieve_candidates
from .serving import RecommendationStore
from .vector_store import EmbeddingStore, StoreView, _from_us, _us, atomic_write_bytes, refresh_contents

logger = logging.getLogger(__name__)

STAGES = ("prompt", "embed", "retrieve", "rerank")


def signature(opp: Opportunity) -> int:
    """64-bit hash of the normalized critical-property tuple."""
    return stable_hash64("\x1f".join(opp.critical_tuple()))


# -- watermark ---------------------------------------------------------------

_WM_HEADER = struct.Struct("<4sHqQQ")
_WM_MAGIC = b"OMWM"


@dataclass(frozen=True)
class Watermark:
    last_run_at: datetime
    signatures: Mapping[str, int]
    store_version: int = 0

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_WM_HEADER.pack(_WM_MAGIC, 1, _us(self.last_run_at), self.store_version, len(self.signatures)))
        for oid in sorted(self.signatures):
            raw = oid.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<Q", self.signatures[oid]))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Watermark":
        try:
            magic, fmt, last, store_version, count = _WM_HEADER.unpack_from(data, 0)
            if magic != _WM_MAGIC or fmt != 1:
                raise StoreFormatError("not a watermark file")
            pos = _WM_HEADER.size
            sigs: dict[str, int] = {}
            for _ in range(count):
                (n,) = struct.unpack_from("<I", data, pos)
                pos += 4
                oid = data[pos : pos + n].decode("utf-8")
                pos += n
                (sigs[oid],) = struct.unpack_from("<Q", data, pos)
                pos += 8
        except struct.error as exc:
            raise StoreFormatError(f"truncated watermark: {exc}") from exc
        if pos != len(data):
            raise StoreFormatError("trailing bytes in watermark")
        return cls(_from_us(last), sigs, store_version)

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Watermark":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class Delta:
    new: tuple[Opportunity, ...]
    changed: tuple[Opportunity, ...]

    @property
    def ids(self) -> list[str]:
        return sorted(o.opportunity_id for o in (*self.new, *self.changed))

    def __len__(self) -> int:
        return len(self.new) + len(self.changed)


def detect_delta(
    watermark: Watermark | None, snapshot: CatalogSnapshot[Opportunity]
) -> tuple[Delta, dict[str, int]]:
    """Net-new opportunities plus those whose critical-property signature moved."""
    seen = watermark.signatures if watermark else {}
    new, changed = [], []
    sigs: dict[str, int] = {}
    for opp in snapshot:
        sig = signature(opp)
        sigs[opp.opportunity_id] = sig
        prev = seen.get(opp.opportunity_id)
        if prev is None:
            new.append(opp)
        elif prev != sig:
            changed.append(opp)
    return Delta(tuple(new), tuple(changed)), sigs


# -- shared run context ------------------------------------------------------


@dataclass
class MatchContext:
    """Everything a worker needs; built once by the orchestrator and never mutated mid-run."""

    opportunities: CatalogSnapshot[Opportunity]
    catalog: CatalogSnapshot[ContentDoc]
    view: StoreView
    embedder: EmbeddingProvider
    scorer: CrossScorer
    group: FeatureGroup = FeatureGroup.A
    top_k: int = 50
    top_n: int = 5
    batch_size: int = 64
    # stamped on every recommendation; defaults to the opportunity snapshot time
    generated_at: datetime | None = None
    index: RetrievalIndex = field(init=False)
    content_prompts: dict[str, Prompt] = field(init=False)
    model_version: str = field(init=False)
    candidates: dict[str, CandidateSet] = field(default_factory=dict)
    # test hook: called as fault(opportunity_id, attempt) inside workers
    fault: Callable[[str, int], None] | None = None

    def __post_init__(self) -> None:
        self.group = FeatureGroup(self.group)
        if self.generated_at is None:
            self.generated_at = self.opportunities.snapshot_time
        self.index = RetrievalIndex(self.view, self.catalog)
        if self.index.missing:
            logger.warning("%d catalog documents have no stored embedding", len(self.index.missing))
        self.content_prompts = {}
        for doc in self.index.docs:
            self.content_prompts[doc.content_id] = build_content_prompt(doc)
        self.model_version = (
            f"{self.embedder.name}+{self.scorer.name};group={self.group.value};"
            f"k={self.top_k};n={self.top_n};emb=v{self.view.version}"
        )

    @classmethod
    def from_config(
        cls,
        cfg: RunConfig,
        opportunities: CatalogSnapshot[Opportunity],
        catalog: CatalogSnapshot[ContentDoc],
        view: StoreView,
        **kw: Any,
    ) -> "MatchContext":
        return cls(
            opportunities=opportunities,
            catalog=catalog,
            view=view,
            embedder=kw.pop("embedder", None) or make_embedder(cfg),
            scorer=kw.pop("scorer", None) or make_scorer(cfg),
            group=FeatureGroup(cfg.group),
            top_k=cfg.top_k,
            top_n=cfg.top_n,
            batch_size=cfg.batch_size,
            generated_at=cfg.as_of_time() or opportunities.snapshot_time,
            **kw,
        )

    # stage functions ------------------------------------------------------

    def stage_prompt(self, opp: Opportunity, group: FeatureGroup | None = None) -> Prompt:
        return build_opportunity_prompt(opp, group or self.group)

    def stage_embed(self, prompt: Prompt):
        return self.embedder.embed_batch([prompt])[0]

    def stage_retrieve(self, vector, opp: Opportunity) -> CandidateSet:
        return retrieve_candidates(vector, opp, self.index, self.top_k)

    def stage_rerank(self, cands: CandidateSet, prompt: Prompt) -> Recommendation:
        return rerank(
            cands,
            prompt,
            self.content_prompts,
            self.catalog.records,
            self.scorer,
            n=self.top_n,
            batch_size=self.batch_size,
            model_version=self.model_version,
            generated_at=self.generated_at,
        )

    def recommend(
        self,
        opp: Opportunity,
        timings: dict[str, float] | None = None,
        group: FeatureGroup | None = None,
    ) -> Recommendation:
        t = timings if timings is not None else defaultdict(float)
        t0 = time.perf_counter()
        prompt = self.stage_prompt(opp, group)
        t1 = time.perf_counter()
        vector = self.stage_embed(prompt)
        t2 = time.perf_counter()
        cands = self.stage_retrieve(vector, opp)
        t3 = time.perf_counter()
        rec = self.stage_rerank(cands, prompt)
        t4 = time.perf_counter()
        t["prompt"] += t1 - t0
        t["embed"] += t2 - t1
        t["retrieve"] += t3 - t2
        t["rerank"] += t4 - t3
        return rec


@dataclass(frozen=True)
class Skipped:
    reason: str


@dataclass(frozen=True)
class Failed:
    error: str


Outcome = Recommendation | Skipped | Failed | CandidateSet


# set by the orchestrator right before the pool forks
_ACTIVE: MatchContext | None = None


def _full_task(ctx: MatchContext, opp_id: str, timings: dict[str, float]) -> Outcome:
    opp = ctx.opportunities[opp_id]
    try:
        return ctx.recommend(opp, timings)
    except EmptyPrompt as exc:
        return Skipped(f"empty prompt: {exc}")


def _rerank_task(ctx: MatchContext, opp_id: str, timings: dict[str, float]) -> Outcome:
    t0 = time.perf_counter()
    prompt = ctx.stage_prompt(ctx.opportunities[opp_id])
    t1 = time.perf_counter()
    rec = ctx.stage_rerank(ctx.candidates[opp_id], prompt)
    timings["prompt"] += t1 - t0
    timings["rerank"] += time.perf_counter() - t1
    return rec


TASKS: dict[str, Callable[[MatchContext, str, dict[str, float]], Outcome]] = {
    "full": _full_task,
    "rerank": _rerank_task,
}


def _run_chunk(task: str, ids: Sequence[str], attempt: int) -> tuple[dict[str, Outcome], dict[str, float]]:
    ctx = _ACTIVE
    assert ctx is not None, "no active match context"
    fn = TASKS[task]
    timings: dict[str, float] = defaultdict(float)
    out: dict[str, Outcome] = {}
    for opp_id in ids:
        try:
            if ctx.fault is not None:
                ctx.fault(opp_id, attempt)
            out[opp_id] = fn(ctx, opp_id, timings)
        except Exception as exc:  # isolate per-item failures
            logger.warning("item %s failed on attempt %d: %r", opp_id, attempt, exc)
            out[opp_id] = Failed(repr(exc))
    return out, dict(timings)


def partition(ids: Sequence[str], workers: int) -> list[list[str]]:
    """Split into at most ``workers`` contiguous, near-equal, non-empty chunks."""
    n = len(ids)
    w = max(1, min(workers, n))
    bounds = [n * i // w for i in range(w + 1)]
    return [list(ids[bounds[i] : bounds[i + 1]]) for i in range(w) if bounds[i] < bounds[i + 1]]


@dataclass
class ParallelResult:
    outcomes: dict[str, Outcome]
    stage_seconds: dict[str, float]
    wall_time: float
    workers: int
    failed: list[str]


def _executor(workers: int):
    if "fork" in mp.get_all_start_methods():
        return ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("fork"))
    return ThreadPoolExecutor(max_workers=workers)


def execute_parallel(
    ctx: MatchContext,
    ids: Iterable[str],
    workers: int = 1,
    task: str = "full",
    retry_limit: int = 2,
) -> ParallelResult:
    """Run ``task`` for every id across ``workers`` workers.

    With ``workers == 1`` the work runs in-process.  Items that fail (or whose
    worker process dies) are retried up to ``retry_limit`` times; ids still
    failing are reported in ``failed``.
    """
    global _ACTIVE
    if workers < 1:
        raise ValueError("workers must be >= 1")
    todo = sorted(set(ids))
    outcomes: dict[str, Outcome] = {}
    stage: dict[str, float] = defaultdict(float)
    start = time.perf_counter()
    _ACTIVE = ctx
    try:
        for attempt in range(retry_limit + 1):
            if not todo:
                break
            chunks = partition(todo, workers)
            if workers == 1:
                results = [_run_chunk(task, chunk, attempt) for chunk in chunks]
            else:
                results = []
                with _executor(len(chunks)) as pool:
                    futures = [(chunk, pool.submit(_run_chunk, task, chunk, attempt)) for chunk in chunks]
                    for chunk, fut in futures:
                        try:
                            results.append(fut.result())
                        except BrokenProcessPool as exc:
                            logger.error("worker died on chunk of %d: %r", len(chunk), exc)
                            results.append(({oid: Failed(repr(exc)) for oid in chunk}, {}))
            for out, timings in results:
                outcomes.update(out)
                for name, secs in timings.items():
                    stage[name] += secs
            todo = sorted(oid for oid, res in outcomes.items() if isinstance(res, Failed))
    finally:
        _ACTIVE = None
    wall = time.perf_counter() - start
    return ParallelResult(
        outcomes={k: outcomes[k] for k in sorted(outcomes)},
        stage_seconds={name: stage.get(name, 0.0) for name in STAGES},
        wall_time=wall,
        workers=workers,
        failed=todo,
    )


# -- run modes ---------------------------------------------------------------


@dataclass
class RunReport:
    mode: str
    processed: int = 0
    delta_new: int = 0
    delta_changed: int = 0
    skipped: int = 0
    wall_time: float = 0.0
    per_opportunity_ms: float = 0.0
    workers: int = 1
    stage_seconds: dict[str, float] = field(default_factory=dict)
    skipped_reasons: dict[str, str] = field(default_factory=dict)
    store_version: int = 0
    refresh: dict[str, int] | None = None

    def to_json(self) -> dict[str, Any]:
        out = {
            "mode": self.mode,
            "counts": {
                "processed": self.processed,
                "delta_new": self.delta_new,
                "delta_changed": self.delta_changed,
                "skipped": self.skipped,
            },
            "wall_time": self.wall_time,
            "per_opportunity_ms": self.per_opportunity_ms,
            "workers": self.workers,
            "stage_seconds": self.stage_seconds,
            "skipped_reasons": self.skipped_reasons,
            "store_version": self.store_version,
        }
        if self.refresh is not None:
            out["refresh"] = self.refresh
        return out

    def summary(self) -> str:
        lines = [
            f"mode={self.mode} workers={self.workers} processed={self.processed} "
            f"(new={self.delta_new} changed={self.delta_changed}) skipped={self.skipped}",
            f"wall={self.wall_time:.3f}s per_opportunity={self.per_opportunity_ms:.2f}ms",
        ]
        if self.stage_seconds:
            lines.append(" ".join(f"{k}={v:.3f}s" for k, v in self.stage_seconds.items()))
        if self.refresh is not None:
            lines.append(" ".join(f"{k}={v}" for k, v in self.refresh.items()))
        return "\n".join(lines)


def _process(
    ctx: MatchContext,
    delta: Delta,
    store: RecommendationStore,
    report: RunReport,
    workers: int,
    retry_limit: int,
) -> None:
    ids = delta.ids
    result = execute_parallel(ctx, ids, workers=workers, retry_limit=retry_limit)
    if result.failed:
        raise RunFailed(f"{len(result.failed)} opportunities failed after retries", result.failed)
    recs = [o for o in result.outcomes.values() if isinstance(o, Recommendation)]
    skipped = {oid: o.reason for oid, o in result.outcomes.items() if isinstance(o, Skipped)}
    if recs:
        store.upsert_many(recs)
        store.compact()
    report.processed = len(ids)
    report.delta_new = len(delta.new)
    report.delta_changed = len(delta.changed)
    report.skipped = len(skipped)
    report.skipped_reasons = skipped
    report.wall_time = result.wall_time
    report.per_opportunity_ms = 1000.0 * result.wall_time / len(ids) if ids else 0.0
    report.stage_seconds = result.stage_seconds


def prepopulate(
    ctx: MatchContext,
    store: RecommendationStore,
    watermark_path: str | os.PathLike,
    workers: int = 1,
    retry_limit: int = 2,
    before_watermark: Callable[[], None] | None = None,
) -> RunReport:
    """Recommend for every opportunity in the snapshot, then write a full watermark."""
    _, sigs = detect_delta(None, ctx.opportunities)
    delta = Delta(tuple(ctx.opportunities), ())
    report = RunReport(mode="prepopulate", workers=workers, store_version=ctx.view.version)
    _process(ctx, delta, store, report, workers, retry_limit)
    if before_watermark:
        before_watermark()
    Watermark(ctx.generated_at, sigs, ctx.view.version).save(watermark_path)
    return report


def run_daily(
    ctx: MatchContext,
    store: RecommendationStore,
    watermark_path: str | os.PathLike,
    workers: int = 1,
    retry_limit: int = 2,
    before_watermark: Callable[[], None] | None = None,
) -> RunReport:
    """Recompute recommendations only for the delta since the last watermark.

    The watermark is replaced only after the store commit, so a crash in
    between makes the next run reprocess the same delta.
    """
    watermark = Watermark.load(watermark_path)
    delta, sigs = detect_delta(watermark, ctx.opportunities)
    report = RunReport(mode="daily", workers=workers, store_version=ctx.view.version)
    if len(delta):
        _process(ctx, delta, store, report, workers, retry_limit)
    if before_watermark:
        before_watermark()
    Watermark(max(watermark.last_run_at, ctx.generated_at), sigs, ctx.view.version).save(watermark_path)
    return report


def run_weekly_embed(
    catalog: CatalogSnapshot[ContentDoc],
    store_path: str | os.PathLike,
    provider: EmbeddingProvider,
    batch_size: int = 256,
    clock: Callable[[], datetime] | None = None,
) -> RunReport:
    start = time.perf_counter()
    store = EmbeddingStore.open(store_path, provider.dim)
    stats = refresh_contents(store, catalog, provider, batch_size=batch_size, clock=clock)
    if stats.mutated or not Path(store_path).exists():
        store.save(store_path)
    return RunReport(
        mode="weekly-embed",
        processed=stats.new + stats.changed,
        skipped=stats.skipped,
        wall_time=time.perf_counter() - start,
        store_version=stats.version,
        refresh=stats.to_json(),
    )


def benchmark_rerank(ctx: MatchContext, ids: Sequence[str], workers: int) -> ParallelResult:
    """Time the rerank stage alone over precomputed stage-1 candidates."""
    for oid in ids:
        if oid not in ctx.candidates:
            opp = ctx.opportunities[oid]
            ctx.candidates[oid] = ctx.stage_retrieve(ctx.stage_embed(ctx.stage_prompt(opp)), opp)
    return execute_parallel(ctx, ids, workers=workers, task="rerank", retry_limit=0)


def report_line(report: RunReport) -> str:
    return json.dumps(report.to_json(), sort_keys=True)
