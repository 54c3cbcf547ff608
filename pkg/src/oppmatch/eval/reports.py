"""Alignment of model scores with human and judge ratings, and the feature ablation summary."""

from __future__ import annotations

import csv
import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from ..catalog import Opportunity
from ..errors import UnknownGroup
from ..prompts import FeatureGroup
from ..rerank import Recommendation
from .metrics import pearson, spearman

# externally reported reference figures; kept for comparison, never asserted
REFERENCE_VALUES = {
    "human_vs_cross": {"pearson": 0.78, "spearman": 0.64},
    "human_vs_judge": {"pearson": 0.42, "spearman": 0.57},
}


@dataclass(frozen=True)
class EvalQuery:
    query_id: str
    prompt: str
    group: FeatureGroup
    recommendation: Recommendation
    doc_prompts: tuple[str, ...] = ()

    @property
    def mean_cross_score(self) -> float:
        return self.recommendation.mean_score

    def to_json(self) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "group": self.group.value,
            "prompt": self.prompt,
            "recommendation": self.recommendation.to_json(),
            "doc_prompts": list(self.doc_prompts),
            "mean_cross_score": self.mean_cross_score,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "EvalQuery":
        return cls(
            query_id=obj["query_id"],
            prompt=obj["prompt"],
            group=FeatureGroup(obj.get("group", "A")),
            recommendation=Recommendation.from_json(obj["recommendation"]),
            doc_prompts=tuple(obj.get("doc_prompts", ())),
        )


@dataclass(frozen=True)
class RatingSet:
    query_id: str
    rater_id: str
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        for s in self.scores:
            if not 0.0 <= s <= 5.0:
                raise ValueError(f"rating {s} outside [0, 5] for {self.query_id}/{self.rater_id}")

    @property
    def mean(self) -> float:
        return sum(self.scores) / len(self.scores)

    def to_json(self) -> dict[str, Any]:
        return {"rater_id": self.rater_id, "query_id": self.query_id, "scores": list(self.scores)}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "RatingSet":
        return cls(str(obj["query_id"]), str(obj["rater_id"]), tuple(float(s) for s in obj["scores"]))


def build_eval_queries(ctx, specs: Iterable[tuple[str, Opportunity, str | FeatureGroup]]) -> list[EvalQuery]:
    """Run each (query id, opportunity, group) through the full two-stage model."""
    out = []
    for qid, opp, group in specs:
        g = FeatureGroup(group)
        prompt = ctx.stage_prompt(opp, g)
        rec = ctx.recommend(opp, group=g)
        docs = tuple(ctx.content_prompts[cid].text for cid in rec.content_ids)
        out.append(EvalQuery(qid, prompt.text, g, rec, docs))
    return out


def _per_query_means(queries: Sequence[EvalQuery], ratings: Iterable[RatingSet]) -> dict[str, float]:
    """Average each rater over the items, then average the raters."""
    by_query: dict[str, list[float]] = defaultdict(list)
    n_items = {q.query_id: len(q.recommendation.items) for q in queries}
    for rs in ratings:
        if rs.query_id not in n_items:
            continue
        if len(rs.scores) != n_items[rs.query_id]:
            raise ValueError(
                f"rater {rs.rater_id} gave {len(rs.scores)} scores for {n_items[rs.query_id]} items on {rs.query_id}"
            )
        by_query[rs.query_id].append(rs.mean)
    return {qid: sum(v) / len(v) for qid, v in by_query.items()}


@dataclass
class AlignmentReport:
    kind: str
    pearson: float
    spearman: float
    points: list[tuple[str, float, float]]
    x_label: str
    y_label: str
    reference: dict[str, float] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.points)

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "n": self.n,
            "pearson": self.pearson,
            "spearman": self.spearman,
            "reference": self.reference,
        }

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["query_id", self.x_label, self.y_label])
            for row in self.points:
                w.writerow(row)


def _correlate(kind: str, xs: Mapping[str, float], ys: Mapping[str, float], x_label: str, y_label: str, ref) -> AlignmentReport:
    qids = sorted(set(xs) & set(ys))
    x = [xs[q] for q in qids]
    y = [ys[q] for q in qids]
    return AlignmentReport(
        kind=kind,
        pearson=pearson(x, y),
        spearman=spearman(x, y),
        points=[(q, xs[q], ys[q]) for q in qids],
        x_label=x_label,
        y_label=y_label,
        reference=dict(ref),
    )


def alignment_report(queries: Sequence[EvalQuery], ratings: Iterable[RatingSet]) -> AlignmentReport:
    """Per-query mean model score against the mean human rating."""
    human = _per_query_means(queries, ratings)
    model = {q.query_id: q.mean_cross_score for q in queries if q.recommendation.items}
    return _correlate(
        "human_vs_cross", model, human, "mean_cross_score", "mean_human_rating",
        REFERENCE_VALUES["human_vs_cross"],
    )


def judge_alignment(
    queries: Sequence[EvalQuery], human: Iterable[RatingSet], judge: Iterable[RatingSet]
) -> AlignmentReport:
    return _correlate(
        "human_vs_judge",
        _per_query_means(queries, human),
        _per_query_means(queries, judge),
        "mean_human_rating",
        "mean_judge_rating",
        REFERENCE_VALUES["human_vs_judge"],
    )


@dataclass
class GroupSummary:
    n: int
    mean: float
    min: float
    max: float


@dataclass
class AblationReport:
    groups: dict[str, GroupSummary]
    rows: list[tuple[str, str, float]]

    def to_json(self) -> dict[str, Any]:
        return {
            "groups": {g: vars(s) for g, s in self.groups.items()},
            "queries": [{"group": g, "query_id": q, "mean_cross_score": s} for g, q, s in self.rows],
        }

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group", "query_id", "mean_cross_score"])
            w.writerows(self.rows)


def ablation_report(queries: Sequence[EvalQuery]) -> AblationReport:
    """Per-group mean/min/max of the per-query mean cross score; listing ordered by group."""
    by_group: dict[str, list[tuple[str, float]]] = defaultdict(list)
    for q in queries:
        try:
            label = FeatureGroup(q.group).value
        except ValueError:
            raise UnknownGroup(f"query {q.query_id} has unknown group {q.group!r}") from None
        by_group[label].append((q.query_id, q.mean_cross_score))
    groups = {}
    rows = []
    for label in sorted(by_group):
        entries = sorted(by_group[label])
        scores = [s for _, s in entries]
        groups[label] = GroupSummary(len(scores), sum(scores) / len(scores), min(scores), max(scores))
        rows += [(label, qid, s) for qid, s in entries]
    return AblationReport(groups, rows)


def read_jsonl(path: str | os.PathLike) -> list[dict[str, Any]]:
    with Path(path).open("r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
