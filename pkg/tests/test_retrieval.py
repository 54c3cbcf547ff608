from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oppmatch.catalog import CatalogSnapshot, normalize_field
from oppmatch.embedding import HashingEmbedder
from oppmatch.errors import DimensionMismatch
from oppmatch.retrieval import (
    RetrievalIndex,
    measure_search_space,
    passes_filter,
    retrieve_candidates,
    search_space_stats,
)
from oppmatch.vector_store import StoreView

from .conftest import T0, make_doc, make_opp

STAGES = [None, "Qualify", "qualify ", "Close"]
AREAS = [None, "EMEA", "Americas"]
SOLUTIONS = [None, "Data & AI", "Security"]


def oracle_pass(opp, doc) -> bool:
    pairs = [
        (opp.sales_stage_name, doc.sales_stage),
        (opp.area_name, doc.area),
        (opp.solution_area, doc.solution_area),
    ]
    for want, have in pairs:
        if want is None or have is None:
            continue
        if " ".join(want.split()).casefold() != " ".join(have.split()).casefold():
            return False
    return True


def index_for(docs, vectors):
    cat = CatalogSnapshot({d.content_id: d for d in docs}, T0, "mem:")
    ids = [d.content_id for d in docs]
    view = StoreView(vectors.shape[1], 1, T0, ids, [0] * len(ids), vectors)
    return RetrievalIndex(view, cat), cat


def test_filter_rules():
    doc = make_doc("C1", sales_stage="Qualify", area=None, solution_area="Data & AI")
    assert passes_filter(make_opp("O", sales_stage_name="  QUALIFY"), doc)
    assert passes_filter(make_opp("O", area_name="EMEA"), doc)  # doc wildcard
    assert passes_filter(make_opp("O"), doc)  # all filters inactive
    assert not passes_filter(make_opp("O", solution_area="Security"), doc)


field_doc = st.builds(
    lambda i, s, a, sol: make_doc(f"C{i:03d}", sales_stage=s, area=a, solution_area=sol),
    st.integers(0, 999), st.sampled_from(STAGES), st.sampled_from(AREAS), st.sampled_from(SOLUTIONS),
)
field_opp = st.builds(
    lambda s, a, sol: make_opp("O", sales_stage_name=s, area_name=a, solution_area=sol),
    st.sampled_from(STAGES), st.sampled_from(AREAS), st.sampled_from(SOLUTIONS),
)


@settings(max_examples=200)
@given(field_opp, field_doc)
def test_filter_matches_oracle(opp, doc):
    assert passes_filter(opp, doc) == oracle_pass(opp, doc)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(field_doc, min_size=1, max_size=30, unique_by=lambda d: d.content_id),
    field_opp,
    st.integers(1, 12),
    st.integers(0, 2**31),
)
def test_topk_matches_brute_force(docs, opp, k, seed):
    rng = np.random.default_rng(seed)
    # few distinct rows so exact ties are common
    basis = rng.normal(size=(3, 8)).astype(np.float32)
    vectors = basis[rng.integers(0, 3, size=len(docs))]
    index, cat = index_for(docs, vectors)
    query = rng.normal(size=8).astype(np.float32)
    got = retrieve_candidates(query, opp, index, k)

    q = query.astype(np.float64)
    pool = []
    for d, v in zip(docs, vectors):
        if oracle_pass(opp, d):
            pool.append((-float(np.dot(v.astype(np.float64), q)), d.content_id))
    want = [cid for _, cid in sorted(pool)[:k]]
    assert got.ids == want
    assert all(passes_filter(opp, cat[cid]) for cid in got.ids)
    scores = [s for _, s in got.candidates]
    assert scores == sorted(scores, reverse=True)


def test_mask_matches_passes_filter_on_fields():
    docs = [make_doc(f"C{i}", sales_stage=STAGES[i % 4], area=AREAS[i % 3]) for i in range(12)]
    index, _ = index_for(docs, np.eye(12, 12, dtype=np.float32))
    for stage in STAGES:
        opp = make_opp("O", sales_stage_name=stage, area_name="emea")
        assert list(index.filter_mask(opp)) == [passes_filter(opp, d) for d in index.docs]


def test_unseen_value_only_matches_wildcards():
    docs = [make_doc("C1", area="EMEA"), make_doc("C2", area=None)]
    index, _ = index_for(docs, np.eye(2, 4, dtype=np.float32))
    assert retrieve_candidates(np.ones(4), make_opp("O", area_name="Mars"), index).ids == ["C2"]


def test_empty_filter_result_is_legal():
    index, _ = index_for([make_doc("C1", area="EMEA")], np.eye(1, 4, dtype=np.float32))
    assert retrieve_candidates(np.ones(4), make_opp("O", area_name="APAC"), index).candidates == ()


def test_dim_mismatch():
    index, _ = index_for([make_doc("C1")], np.eye(1, 4, dtype=np.float32))
    with pytest.raises(DimensionMismatch):
        retrieve_candidates(np.ones(3), make_opp("O"), index)


def test_docs_without_embeddings_are_reported():
    cat = CatalogSnapshot({"C1": make_doc("C1"), "C2": make_doc("C2")}, T0, "mem:")
    view = StoreView(4, 1, T0, ["C1"], [0], np.eye(1, 4))
    index = RetrievalIndex(view, cat)
    assert index.ids == ["C1"] and index.missing == ["C2"]


def test_search_space_stats_exact():
    s = search_space_stats(700_000, 40_000, 7_000)
    assert s.naive_pairs == 28_000_000_000
    assert s.filtered_pairs == 4_900_000_000
    assert s.reduction_fraction == 0.825
    assert search_space_stats(0, 10, 0).reduction_fraction == 0.0
    with pytest.raises(ValueError):
        search_space_stats(-1, 1, 1)


def test_measure_search_space_counts_pairs():
    docs = [make_doc("C1", area="EMEA"), make_doc("C2", area="APAC"), make_doc("C3")]
    cat = CatalogSnapshot({d.content_id: d for d in docs}, T0, "mem:")
    opps = [make_opp("O1", area_name="emea"), make_opp("O2")]
    s = measure_search_space(opps, cat)
    assert s.naive_pairs == 6
    assert s.filtered_pairs == 5
    assert s.mean_filtered_contents == 2.5


def test_hashing_vectors_integrate():
    emb = HashingEmbedder(32)
    docs = [make_doc(f"C{i}", name=n) for i, n in enumerate(["azure data", "azure", "security"])]
    vecs = np.stack([emb.embed_text(d.name) for d in docs])
    index, _ = index_for(docs, vecs)
    got = retrieve_candidates(emb.embed_text("azure data"), make_opp("O"), index, 1)
    assert got.ids == ["C0"]
    assert normalize_field(got.opportunity_id) == "o"
