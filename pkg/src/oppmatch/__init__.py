"""Batch opportunity-to-content recommendations with two-stage retrieve-then-rerank scoring."""

__version__ = "0.1.0"
