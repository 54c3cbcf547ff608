"""Stage 1: hard attribute filters followed by an exhaustive cosine top-K scan."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .catalog import CatalogSnapshot, ContentDoc, Opportunity
from .embedding import EmbeddingVector
from .errors import DimensionMismatch
from .vector_store import StoreView

DEFAULT_K = 50

FILTER_FIELDS = ("sales stage", "area", "solution area")

_WILDCARD = -1
_UNSEEN = -2


def passes_filter(opp: Opportunity, doc: ContentDoc) -> bool:
    """Each filter is inactive when the opportunity lacks the field, and a
    document lacking it is a wildcard; otherwise normalized values must match."""
    for want, have in zip(opp.filter_key, doc.filter_key):
        if want and have and want != have:
            return False
    return True


@dataclass(frozen=True)
class CandidateSet:
    opportunity_id: str
    candidates: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> list[str]:
        return [cid for cid, _ in self.candidates]

    def __len__(self) -> int:
        return len(self.candidates)


class RetrievalIndex:
    """Catalog documents that have a stored embedding, laid out for vectorized filtering.

    Rows are in ascending content-id order, which a stable sort on score turns
    into the id tie-break.
    """

    def __init__(self, view: StoreView, catalog: CatalogSnapshot[ContentDoc]):
        ids = [cid for cid in view.ids if cid in catalog]
        self.view_version = view.version
        self.dim = view.dim
        self.ids = ids
        self.docs = [catalog[cid] for cid in ids]
        rows = [view.row(cid) for cid in ids]
        self.matrix = np.ascontiguousarray(view.matrix[rows].astype(np.float64)) if ids else np.zeros((0, view.dim))
        self.missing = sorted(cid for cid in catalog.ids() if cid not in view)
        self._vocab: list[dict[str, int]] = []
        codes = []
        for f in range(len(FILTER_FIELDS)):
            vocab: dict[str, int] = {}
            col = np.empty(len(ids), dtype=np.int64)
            for i, doc in enumerate(self.docs):
                value = doc.filter_key[f]
                col[i] = vocab.setdefault(value, len(vocab)) if value else _WILDCARD
            self._vocab.append(vocab)
            codes.append(col)
        self.codes = codes

    def __len__(self) -> int:
        return len(self.ids)

    def filter_mask(self, opp: Opportunity) -> np.ndarray:
        mask = np.ones(len(self.ids), dtype=bool)
        for f, value in enumerate(opp.filter_key):
            if not value:
                continue
            code = self._vocab[f].get(value, _UNSEEN)
            col = self.codes[f]
            mask &= (col == _WILDCARD) | (col == code)
        return mask


def retrieve_candidates(
    opp_vector: EmbeddingVector | np.ndarray,
    opp: Opportunity,
    index: RetrievalIndex,
    k: int = DEFAULT_K,
) -> CandidateSet:
    """Exact top-k by cosine among filtered documents, ties by ascending content id.

    An empty result is legal when nothing passes the filter.
    """
    query = opp_vector.values if isinstance(opp_vector, EmbeddingVector) else np.asarray(opp_vector)
    if query.shape != (index.dim,):
        raise DimensionMismatch(f"query dim {query.shape} vs store dim {index.dim}")
    rows = np.flatnonzero(index.filter_mask(opp))
    if rows.size == 0 or k <= 0:
        return CandidateSet(opp.opportunity_id, ())
    scores = index.matrix[rows] @ query.astype(np.float64)
    order = np.argsort(-scores, kind="stable")[:k]
    return CandidateSet(
        opp.opportunity_id,
        tuple((index.ids[rows[i]], float(scores[i])) for i in order),
    )


@dataclass(frozen=True)
class SearchSpaceStats:
    n_opportunities: int
    n_contents: int
    naive_pairs: int
    mean_filtered_contents: float
    filtered_pairs: float
    reduction_fraction: float

    def to_json(self) -> dict:
        return {
            "n_opportunities": self.n_opportunities,
            "n_contents": self.n_contents,
            "naive_pairs": self.naive_pairs,
            "mean_filtered_contents": self.mean_filtered_contents,
            "filtered_pairs": self.filtered_pairs,
            "reduction_fraction": self.reduction_fraction,
        }


def _exact(x: Fraction) -> int | float:
    return int(x) if x.denominator == 1 else float(x)


def search_space_stats(n_opps: int, n_contents: int, mean_filtered: float | Fraction) -> SearchSpaceStats:
    """Pair counts before and after filtering; reduction is 0 when there are no pairs."""
    if n_opps < 0 or n_contents < 0 or mean_filtered < 0:
        raise ValueError("counts must be non-negative")
    mean = Fraction(mean_filtered)
    naive = n_opps * n_contents
    filtered = n_opps * mean
    reduction = 1 - filtered / naive if naive else Fraction(0)
    return SearchSpaceStats(
        n_opportunities=n_opps,
        n_contents=n_contents,
        naive_pairs=naive,
        mean_filtered_contents=_exact(mean),
        filtered_pairs=_exact(filtered),
        reduction_fraction=float(reduction),
    )


def measure_search_space(
    opps: Iterable[Opportunity], catalog: CatalogSnapshot[ContentDoc]
) -> SearchSpaceStats:
    """Realized statistics: exact count of filter-passing pairs over the loaded corpora."""
    docs = list(catalog)
    keys = [d.filter_key for d in docs]
    n_opps = 0
    passing = 0
    for opp in opps:
        n_opps += 1
        want = opp.filter_key
        passing += sum(
            1 for have in keys if all(not w or not h or w == h for w, h in zip(want, have))
        )
    mean = Fraction(passing, n_opps) if n_opps else Fraction(0)
    return search_space_stats(n_opps, len(docs), mean)
