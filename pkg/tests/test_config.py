from __future__ import annotations

import json

import pytest

from oppmatch.config import RunConfig, load_config, make_embedder, make_judge, make_scorer
from oppmatch.embedding import HashingEmbedder, HttpEmbedder
from oppmatch.errors import InvalidConfig
from oppmatch.eval.judge import ChatJudge, MockJudge
from oppmatch.rerank import HttpCrossScorer, JaccardScorer


def test_defaults():
    cfg = RunConfig()
    assert (cfg.top_k, cfg.top_n, cfg.workers, cfg.group) == (50, 5, 1, "A")
    assert isinstance(make_embedder(cfg), HashingEmbedder)
    assert isinstance(make_scorer(cfg), JaccardScorer)
    assert isinstance(make_judge(cfg), MockJudge)


def test_relative_paths_resolve_against_config_file(tmp_path):
    sub = tmp_path / "conf"
    sub.mkdir()
    path = sub / "run.json"
    path.write_text(json.dumps({"contents": "c.jsonl", "state_dir": "/abs/state", "top_n": 3}))
    cfg = load_config(path, workers=4)
    assert cfg.contents == str(sub / "c.jsonl")
    assert cfg.state_dir == "/abs/state"
    assert cfg.top_n == 3 and cfg.workers == 4
    assert cfg.embeddings_path.name == "embeddings.bin"


def test_none_override_keeps_file_value(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"workers": 2}))
    assert load_config(path, workers=None).workers == 2


@pytest.mark.parametrize(
    "body",
    [{"bogus": 1}, {"workers": 0}, {"group": "Z"}, {"embedding": {"kind": "reference", "nope": 1}}, [1]],
)
def test_invalid_configs(tmp_path, body):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(body))
    with pytest.raises(InvalidConfig):
        load_config(path)


def test_http_providers(monkeypatch):
    cfg = RunConfig(
        embedding={"kind": "http", "endpoint": "http://x/embed"},
        scorer={"kind": "http", "endpoint": "http://x/score"},
        judge={"kind": "http", "endpoint": "http://x/chat", "model": "m"},
    )
    assert isinstance(make_embedder(cfg), HttpEmbedder)
    assert isinstance(make_scorer(cfg), HttpCrossScorer)
    assert isinstance(make_judge(cfg), ChatJudge)
    monkeypatch.setenv("OPPMATCH_SCORER_ENDPOINT", "http://override/score")
    assert make_scorer(cfg)._endpoint.url == "http://override/score"


def test_http_provider_needs_endpoint(monkeypatch):
    monkeypatch.delenv("OPPMATCH_EMBEDDING_ENDPOINT", raising=False)
    with pytest.raises(InvalidConfig):
        make_embedder(RunConfig(embedding={"kind": "http"}))
    with pytest.raises(InvalidConfig):
        make_scorer(RunConfig(scorer={"kind": "weird"}))
