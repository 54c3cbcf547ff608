"""Evaluation machinery: correlation metrics, rating alignment, ablation and LLM-as-judge."""

from .judge import (
    ChatJudge,
    JudgeRequest,
    MockJudge,
    Transcript,
    build_judge_prompt,
    judge_many,
    parse_judge_response,
)
from .metrics import average_ranks, pearson, spearman
from .reports import (
    REFERENCE_VALUES,
    AblationReport,
    AlignmentReport,
    EvalQuery,
    RatingSet,
    ablation_report,
    alignment_report,
    build_eval_queries,
    judge_alignment,
)

__all__ = [
    "ChatJudge", "JudgeRequest", "MockJudge", "Transcript", "build_judge_prompt", "judge_many",
    "parse_judge_response", "average_ranks", "pearson", "spearman", "REFERENCE_VALUES",
    "AblationReport", "AlignmentReport", "EvalQuery", "RatingSet", "ablation_report",
    "alignment_report", "build_eval_queries", "judge_alignment",
]
