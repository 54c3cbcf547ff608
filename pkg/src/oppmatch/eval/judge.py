"""LLM-as-judge request rendering, response parsing and judge clients."""

from __future__ import annotations

import logging
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

from ..errors import ProviderUnavailable, UnparseableResponse, WrongDocCount
from ..http_client import JsonEndpoint
from ..prompts import Prompt
from ..rerank import CrossScorer, JaccardScorer

logger = logging.getLogger(__name__)

N_DOCS = 5
MAX_SCORE = 5.0

SYSTEM_MESSAGE = "You are an AI assistant that helps people find information"

_TASKS = (
    "Please perform the following tasks:\n"
    "- Calculate the similarity score between the query and each document. "
    "The similarity score should reflect how relevant each document is to the information "
    "contained in the query. Use a scale from 0 to 5, where 5 indicates a perfect match "
    "and 0 indicates no relevance.\n"
    "- Provide a brief justification for the ranking based on the similarity scores."
)

SCORE_LINE_INSTRUCTION = (
    "Finish with one final line in exactly this form, giving the scores of Doc[1] to Doc[5] in order:\n"
    "SCORES: s1,s2,s3,s4,s5"
)


@dataclass(frozen=True)
class JudgeRequest:
    opportunity_prompt: str
    docs: tuple[str, ...]
    system: str
    user: str

    @property
    def text(self) -> str:
        return f"[system]\n{self.system}\n\n[user]\n{self.user}\n"


def _text(p: Prompt | str) -> str:
    return p.text if isinstance(p, Prompt) else p


def build_judge_prompt(opp_prompt: Prompt | str, docs: Sequence[Prompt | str]) -> JudgeRequest:
    """Render the judge request for the recommended documents, in rank order."""
    if len(docs) != N_DOCS:
        raise WrongDocCount(f"expected {N_DOCS} documents, got {len(docs)}")
    query = _text(opp_prompt)
    doc_texts = tuple(_text(d) for d in docs)
    doc_lines = "\n".join(f"- Doc[{i}]: {t}" for i, t in enumerate(doc_texts, start=1))
    user = (
        "Given the following query about an opportunity:\n"
        f"- {query}\n"
        "And the following documents:\n"
        f"{doc_lines}\n"
        f"{_TASKS}\n\n"
        f"{SCORE_LINE_INSTRUCTION}"
    )
    return JudgeRequest(query, doc_texts, SYSTEM_MESSAGE, user)


_NUM = r"(-?\d+(?:\.\d+)?)"
_SCORE_BLOCK = re.compile(r"^\s*SCORES\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)
_DOC_SCORE = re.compile(r"Doc\s*\[\s*(\d+)\s*\][^\n]*?score[^\d\n-]*" + _NUM, re.IGNORECASE)


def _clamp(values: list[float]) -> list[float]:
    out = []
    for v in values:
        c = min(MAX_SCORE, max(0.0, v))
        if c != v:
            logger.warning("judge score %s outside [0, 5]; clamped to %s", v, c)
        out.append(c)
    return out


def parse_judge_response(text: str, n: int = N_DOCS) -> list[float]:
    """Scores from the ``SCORES:`` line, else from per-document "Doc[i] ... score s" mentions."""
    blocks = _SCORE_BLOCK.findall(text)
    if blocks:
        nums = re.findall(_NUM, blocks[-1])
        if len(nums) == n:
            return _clamp([float(v) for v in nums])
    found: dict[int, float] = {}
    for idx, value in _DOC_SCORE.findall(text):
        found.setdefault(int(idx), float(value))
    if all(i in found for i in range(1, n + 1)):
        return _clamp([found[i] for i in range(1, n + 1)])
    raise UnparseableResponse(f"could not extract {n} scores")


class Judge(Protocol):
    name: str

    def complete(self, request: JudgeRequest) -> str: ...


def quantize(score: float) -> int:
    """Round half up onto the 0..5 integer scale."""
    return int(min(MAX_SCORE, max(0.0, math.floor(MAX_SCORE * score + 0.5))))


class MockJudge:
    """Offline judge: each document gets round(5 * reference cross score)."""

    name = "mock-quantized-cross"

    def __init__(self, scorer: CrossScorer | None = None):
        self.scorer = scorer or JaccardScorer()

    def complete(self, request: JudgeRequest) -> str:
        query = Prompt(request.opportunity_prompt, "query", ())
        pairs = [(query, Prompt(d, f"doc{i}", ())) for i, d in enumerate(request.docs, 1)]
        scores = [quantize(s) for s in self.scorer.score_batch(pairs)]
        lines = [f"Doc[{i}]: similarity score {s}." for i, s in enumerate(scores, 1)]
        lines.append("Justification: scores follow the shared vocabulary between query and document.")
        lines.append("SCORES: " + ",".join(str(s) for s in scores))
        return "\n".join(lines)


class ChatJudge:
    """Chat-completion endpoint (OpenAI-style body), temperature pinned to 0."""

    def __init__(
        self,
        endpoint: str,
        model: str = "gpt-4",
        timeout: float = 60.0,
        retries: int = 2,
        max_in_flight: int = 4,
        api_key_env: str = "OPPMATCH_JUDGE_API_KEY",
    ):
        self.name = f"chat:{model}"
        self.model = model
        self._endpoint = JsonEndpoint(
            endpoint, timeout=timeout, retries=retries, max_in_flight=max_in_flight,
            api_key=os.environ.get(api_key_env),
        )

    def complete(self, request: JudgeRequest) -> str:
        body = self._endpoint.post(
            {
                "model": self.model,
                "temperature": 0,
                "messages": [
                    {"role": "system", "content": request.system},
                    {"role": "user", "content": request.user},
                ],
            }
        )
        try:
            return str(body["choices"][0]["message"]["content"])
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderUnavailable(f"unexpected judge response: {exc}") from exc


@dataclass(frozen=True)
class Transcript:
    query_id: str
    judge: str
    request: str
    response: str

    def to_json(self) -> dict:
        return {"query_id": self.query_id, "judge": self.judge, "request": self.request, "response": self.response}


def judge_many(
    requests: Sequence[tuple[str, JudgeRequest]],
    judge: Judge,
    max_in_flight: int = 4,
) -> list[tuple[str, list[float], Transcript]]:
    """Fan requests out to the judge; results keep the input order."""

    def one(item: tuple[str, JudgeRequest]) -> tuple[str, list[float], Transcript]:
        qid, req = item
        response = judge.complete(req)
        return qid, parse_judge_response(response), Transcript(qid, judge.name, req.text, response)

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        return list(pool.map(one, requests))
