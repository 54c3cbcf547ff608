"""Stage 2: pairwise cross scoring of the shortlist and the final top-N recommendation."""

from __future__ import annotations

import os
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Mapping, Protocol, Sequence

from .catalog import EPOCH, ContentDoc, format_timestamp, parse_timestamp
from .errors import EmptyPrompt, InvalidRecommendation, ProviderUnavailable
from .http_client import JsonEndpoint
from .prompts import Prompt, tokenize
from .retrieval import DEFAULT_K, CandidateSet

DEFAULT_N = 5
DEFAULT_BATCH = 64


class CrossScorer(Protocol):
    name: str

    def score_batch(self, pairs: Sequence[tuple[Prompt, Prompt]]) -> list[float]: ...


def _check(prompt: Prompt) -> None:
    if not prompt.text.strip():
        raise EmptyPrompt(f"empty prompt for {prompt.source_id!r}")


class JaccardScorer:
    """Reference scorer: Jaccard overlap of the two prompts' lowercased token sets.

    Each pair is tokenized jointly at call time, as a real cross-encoder would
    read the concatenated pair; nothing is cached between calls.
    """

    name = "jaccard-tokens"

    def score(self, a: Prompt, b: Prompt) -> float:
        _check(a)
        _check(b)
        left = set(tokenize(a.text))
        right = set(tokenize(b.text))
        union = len(left | right)
        return len(left & right) / union if union else 0.0

    def score_batch(self, pairs: Sequence[tuple[Prompt, Prompt]]) -> list[float]:
        return [self.score(a, b) for a, b in pairs]


class HttpCrossScorer:
    """Remote cross-encoder.  Request ``{"model", "pairs": [[query, doc], ...]}``,
    response ``{"scores": [float, ...]}``."""

    def __init__(
        self,
        endpoint: str,
        model: str = "remote",
        timeout: float = 30.0,
        retries: int = 2,
        max_in_flight: int = 4,
        api_key_env: str = "OPPMATCH_SCORER_API_KEY",
    ):
        self.name = f"http:{model}"
        self.model = model
        self._endpoint = JsonEndpoint(
            endpoint, timeout=timeout, retries=retries, max_in_flight=max_in_flight,
            api_key=os.environ.get(api_key_env),
        )

    def score_batch(self, pairs: Sequence[tuple[Prompt, Prompt]]) -> list[float]:
        for a, b in pairs:
            _check(a)
            _check(b)
        if not pairs:
            return []
        body = self._endpoint.post({"model": self.model, "pairs": [[a.text, b.text] for a, b in pairs]})
        scores = body.get("scores")
        if not isinstance(scores, list) or len(scores) != len(pairs):
            raise ProviderUnavailable("scorer response has wrong shape")
        return [float(s) for s in scores]


def cross_score(opp_prompt: Prompt, content_prompt: Prompt, scorer: CrossScorer | None = None) -> float:
    scorer = scorer or JaccardScorer()
    return scorer.score_batch([(opp_prompt, content_prompt)])[0]


@dataclass(frozen=True)
class RecItem:
    content_id: str
    cross_score: float
    rank: int
    customer_ready: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "contentid": self.content_id,
            "score": self.cross_score,
            "rank": self.rank,
            "customer_ready": self.customer_ready,
        }


@dataclass(frozen=True)
class Recommendation:
    opportunity_id: str
    items: tuple[RecItem, ...]
    model_version: str
    generated_at: datetime = EPOCH

    def validate(self, max_items: int | None = None) -> None:
        if not self.opportunity_id:
            raise InvalidRecommendation("empty opportunity id")
        if max_items is not None and len(self.items) > max_items:
            raise InvalidRecommendation(f"{len(self.items)} items > {max_items}")
        if [it.rank for it in self.items] != list(range(1, len(self.items) + 1)):
            raise InvalidRecommendation(f"ranks not contiguous for {self.opportunity_id}")
        if len({it.content_id for it in self.items}) != len(self.items):
            raise InvalidRecommendation("duplicate content id")
        for prev, cur in zip(self.items, self.items[1:]):
            if (-prev.cross_score, prev.content_id) > (-cur.cross_score, cur.content_id):
                raise InvalidRecommendation(f"items out of order for {self.opportunity_id}")

    @property
    def content_ids(self) -> list[str]:
        return [it.content_id for it in self.items]

    @property
    def mean_score(self) -> float:
        return sum(it.cross_score for it in self.items) / len(self.items) if self.items else 0.0

    def to_json(self) -> dict[str, Any]:
        return {
            "opportunityid": self.opportunity_id,
            "generated_at": format_timestamp(self.generated_at),
            "model_version": self.model_version,
            "items": [it.to_json() for it in self.items],
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Recommendation":
        return cls(
            opportunity_id=obj["opportunityid"],
            items=tuple(
                RecItem(
                    content_id=it["contentid"],
                    cross_score=float(it["score"]),
                    rank=int(it["rank"]),
                    customer_ready=bool(it["customer_ready"]),
                )
                for it in obj["items"]
            ),
            model_version=obj["model_version"],
            generated_at=parse_timestamp(obj["generated_at"]),
        )


def rerank(
    candidates: CandidateSet,
    opp_prompt: Prompt,
    content_prompts: Mapping[str, Prompt],
    docs: Mapping[str, ContentDoc],
    scorer: CrossScorer,
    n: int = DEFAULT_N,
    batch_size: int = DEFAULT_BATCH,
    model_version: str | None = None,
    generated_at: datetime = EPOCH,
) -> Recommendation:
    """Score every candidate and keep the top n by (score desc, content id asc)."""
    version = model_version or scorer.name
    ids = sorted(candidates.ids)
    scored: list[tuple[float, str]] = []
    for start in range(0, len(ids), max(1, batch_size)):
        chunk = ids[start : start + batch_size]
        scores = scorer.score_batch([(opp_prompt, content_prompts[cid]) for cid in chunk])
        scored.extend(zip(scores, chunk))
    scored.sort(key=lambda sc: (-sc[0], sc[1]))
    items = tuple(
        RecItem(cid, float(score), rank, docs[cid].customer_ready)
        for rank, (score, cid) in enumerate(scored[:n], start=1)
    )
    return Recommendation(candidates.opportunity_id, items, version, generated_at)


def count_rerank_records(n_opportunities: int, k: int = DEFAULT_K) -> int:
    """Pairs pushed through the cross scorer: one per retrieved candidate."""
    if n_opportunities < 0 or k < 0:
        raise ValueError("counts must be non-negative")
    return n_opportunities * k
