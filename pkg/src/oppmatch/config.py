"""Run configuration: a JSON file mapped onto a dataclass, plus provider construction."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import Any

from .catalog import parse_timestamp
from .embedding import DEFAULT_DIM, EmbeddingProvider, HashingEmbedder, HttpEmbedder
from .errors import InvalidConfig
from .prompts import DEFAULT_GROUP, FeatureGroup
from .rerank import DEFAULT_BATCH, DEFAULT_N, CrossScorer, HttpCrossScorer, JaccardScorer
from .retrieval import DEFAULT_K


@dataclass
class ProviderConfig:
    kind: str = "reference"
    endpoint: str | None = None
    model: str = "remote"
    timeout: float = 30.0
    retries: int = 2
    max_in_flight: int = 4
    api_key_env: str | None = None


@dataclass
class RunConfig:
    contents: str = "contents.jsonl"
    opportunities: str = "opportunities.jsonl"
    state_dir: str = "state"
    workers: int = 1
    top_k: int = DEFAULT_K
    top_n: int = DEFAULT_N
    batch_size: int = DEFAULT_BATCH
    group: str = DEFAULT_GROUP.value
    retry_limit: int = 2
    dim: int = DEFAULT_DIM
    # logical run time stamped on recommendations; defaults to the snapshot time
    as_of: str | None = None
    embedding: ProviderConfig = field(default_factory=ProviderConfig)
    scorer: ProviderConfig = field(default_factory=ProviderConfig)
    judge: ProviderConfig = field(default_factory=ProviderConfig)

    def __post_init__(self) -> None:
        for name in ("embedding", "scorer", "judge"):
            value = getattr(self, name)
            if isinstance(value, dict):
                setattr(self, name, _provider(value))
        if self.workers < 1:
            raise InvalidConfig("workers must be >= 1")
        if self.top_k < 1 or self.top_n < 1 or self.batch_size < 1:
            raise InvalidConfig("top_k, top_n and batch_size must be >= 1")
        if self.retry_limit < 0:
            raise InvalidConfig("retry_limit must be >= 0")
        try:
            FeatureGroup(self.group)
        except ValueError:
            raise InvalidConfig(f"unknown group {self.group!r}") from None

    @property
    def state(self) -> Path:
        return Path(self.state_dir)

    @property
    def embeddings_path(self) -> Path:
        return self.state / "embeddings.bin"

    @property
    def watermark_path(self) -> Path:
        return self.state / "watermark.bin"

    @property
    def recommendations_dir(self) -> Path:
        return self.state / "recommendations"

    def as_of_time(self) -> datetime | None:
        return parse_timestamp(self.as_of) if self.as_of else None

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def _provider(obj: dict[str, Any]) -> ProviderConfig:
    known = {f.name for f in fields(ProviderConfig)}
    unknown = set(obj) - known
    if unknown:
        raise InvalidConfig(f"unknown provider keys {sorted(unknown)}")
    return ProviderConfig(**obj)


def load_config(path: str | os.PathLike | None = None, **overrides: Any) -> RunConfig:
    data: dict[str, Any] = {}
    base = Path(".")
    if path is not None:
        base = Path(path).parent
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise InvalidConfig("config must be a JSON object")
        # relative paths in a config file resolve against the file's directory
        for key in ("contents", "opportunities", "state_dir"):
            if key in data and not os.path.isabs(data[key]):
                data[key] = str(base / data[key])
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise InvalidConfig(f"unknown config keys {sorted(unknown)}")
    return RunConfig(**data)


def make_embedder(cfg: RunConfig) -> EmbeddingProvider:
    p = cfg.embedding
    if p.kind == "reference":
        return HashingEmbedder(cfg.dim)
    if p.kind == "http":
        endpoint = os.environ.get("OPPMATCH_EMBEDDING_ENDPOINT") or p.endpoint
        if not endpoint:
            raise InvalidConfig("http embedding provider needs an endpoint")
        return HttpEmbedder(
            endpoint, dim=cfg.dim, model=p.model, timeout=p.timeout, retries=p.retries,
            max_in_flight=p.max_in_flight,
            api_key_env=p.api_key_env or "OPPMATCH_EMBEDDING_API_KEY",
        )
    raise InvalidConfig(f"unknown embedding provider {p.kind!r}")


def make_scorer(cfg: RunConfig) -> CrossScorer:
    p = cfg.scorer
    if p.kind == "reference":
        return JaccardScorer()
    if p.kind == "http":
        endpoint = os.environ.get("OPPMATCH_SCORER_ENDPOINT") or p.endpoint
        if not endpoint:
            raise InvalidConfig("http scorer needs an endpoint")
        return HttpCrossScorer(
            endpoint, model=p.model, timeout=p.timeout, retries=p.retries,
            max_in_flight=p.max_in_flight,
            api_key_env=p.api_key_env or "OPPMATCH_SCORER_API_KEY",
        )
    raise InvalidConfig(f"unknown scorer {p.kind!r}")


def make_judge(cfg: RunConfig):
    """Mock judge for the reference provider, chat-completion client for ``http``."""
    from .eval.judge import ChatJudge, MockJudge

    p = cfg.judge
    if p.kind == "reference":
        return MockJudge()
    if p.kind == "http":
        endpoint = os.environ.get("OPPMATCH_JUDGE_ENDPOINT") or p.endpoint
        if not endpoint:
            raise InvalidConfig("http judge needs an endpoint")
        return ChatJudge(
            endpoint, model=p.model, timeout=p.timeout, retries=p.retries,
            max_in_flight=p.max_in_flight,
            api_key_env=p.api_key_env or "OPPMATCH_JUDGE_API_KEY",
        )
    raise InvalidConfig(f"unknown judge {p.kind!r}")
