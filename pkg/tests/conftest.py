from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path

import pytest

from oppmatch.catalog import ContentDoc, Opportunity, load_content_catalog, load_opportunity_snapshot
from oppmatch.config import RunConfig
from oppmatch.embedding import HashingEmbedder
from oppmatch.pipeline import MatchContext
from oppmatch.rerank import JaccardScorer
from oppmatch.synth import SynthConfig, generate
from oppmatch.vector_store import EmbeddingStore, refresh_contents

T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)


def fixed_clock():
    return T0


def make_doc(cid: str, **kw) -> ContentDoc:
    base = dict(
        content_id=cid,
        name=f"deck {cid}",
        description="",
        solution_area=None,
        product=None,
        sales_stage=None,
        area=None,
        customer_ready=True,
        published=True,
        last_modified=T0,
    )
    base.update(kw)
    return ContentDoc(**base)


def make_opp(oid: str, **kw) -> Opportunity:
    base = dict(
        opportunity_id=oid,
        opportunity_name=f"deal {oid}",
        sales_play=None,
        sales_stage_name=None,
        primary_product=None,
        segment=None,
        area_name=None,
        solution_area=None,
        snapshot_time=T0,
    )
    base.update(kw)
    return Opportunity(**base)


def build_context(data_dir: Path, state_dir: Path, opportunities: str = "opportunities.jsonl", **kw) -> MatchContext:
    """Embed the catalog into ``state_dir`` and return a ready context."""
    catalog = load_content_catalog(data_dir / "contents.jsonl")
    opps = load_opportunity_snapshot(data_dir / opportunities)
    store_path = state_dir / "embeddings.bin"
    embedder = HashingEmbedder()
    store = EmbeddingStore.open(store_path, embedder.dim)
    if refresh_contents(store, catalog, embedder, clock=fixed_clock).mutated:
        store.save(store_path)
    return MatchContext(opps, catalog, store.snapshot(), embedder, JaccardScorer(), **kw)


def run_config(data_dir: Path, state_dir: Path, **kw) -> RunConfig:
    return RunConfig(
        contents=str(data_dir / "contents.jsonl"),
        opportunities=str(data_dir / "opportunities.jsonl"),
        state_dir=str(state_dir),
        **kw,
    )


@pytest.fixture(scope="session")
def corpus42(tmp_path_factory):
    """Seed-42 corpus at acceptance scale, written once per session."""
    cfg = SynthConfig(seed=42, n_contents=2000, n_opportunities=300)
    corpus = generate(cfg)
    out = tmp_path_factory.mktemp("corpus42")
    corpus.write(out)
    return cfg, corpus, out


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    cfg = SynthConfig(seed=7, n_contents=300, n_opportunities=60)
    corpus = generate(cfg)
    out = tmp_path_factory.mktemp("small")
    corpus.write(out)
    return cfg, corpus, out


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
