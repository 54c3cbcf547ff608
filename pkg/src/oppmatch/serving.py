"""Recommendation persistence, per-opportunity lookup and seller feedback capture.

On-disk layout of a store directory::

    recommendations.jsonl      compacted latest-wins view, sorted by opportunity id
    recommendations.log.jsonl  upserts appended since the last compaction
    feedback.jsonl             append-only feedback history

HTTP surface (``serve``)::

    GET  /recommendations/<opportunityid>  -> 200 recommendation record | 404
    POST /feedback {opportunityid, contentid, verdict, free_text?} -> 201 | 400 | 404
    GET  /health -> 200
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Iterable, Iterator
from urllib.parse import unquote

from .catalog import format_timestamp, parse_timestamp
from .errors import NotFound, StorageFailure, UnknownReference
from .rerank import DEFAULT_N, Recommendation
from .vector_store import atomic_write_bytes

logger = logging.getLogger(__name__)

VIEW_FILE = "recommendations.jsonl"
LOG_FILE = "recommendations.log.jsonl"
FEEDBACK_FILE = "feedback.jsonl"


class Verdict(str, Enum):
    USEFUL = "useful"
    NOT_USEFUL = "not-useful"


@dataclass(frozen=True)
class FeedbackRecord:
    opportunity_id: str
    content_id: str
    verdict: Verdict
    free_text: str | None = None
    submitted_at: datetime | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "opportunityid": self.opportunity_id,
            "contentid": self.content_id,
            "verdict": self.verdict.value,
            "free_text": self.free_text,
            "submitted_at": format_timestamp(self.submitted_at) if self.submitted_at else None,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "FeedbackRecord":
        submitted = obj.get("submitted_at")
        return cls(
            opportunity_id=str(obj["opportunityid"]),
            content_id=str(obj["contentid"]),
            verdict=Verdict(obj["verdict"]),
            free_text=obj.get("free_text"),
            submitted_at=parse_timestamp(submitted) if submitted else None,
        )


def _line(rec: Recommendation) -> str:
    return json.dumps(rec.to_json(), ensure_ascii=False) + "\n"


class RecommendationStore:
    """Latest-wins map of opportunity id to Recommendation, backed by files."""

    def __init__(self, root: str | os.PathLike, max_items: int = DEFAULT_N):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.max_items = max_items
        self._lock = threading.Lock()
        self._feedback_lock = threading.Lock()
        self._recs: dict[str, Recommendation] = {}
        self._reload()

    @property
    def view_path(self) -> Path:
        return self.root / VIEW_FILE

    @property
    def log_path(self) -> Path:
        return self.root / LOG_FILE

    @property
    def feedback_path(self) -> Path:
        return self.root / FEEDBACK_FILE

    def _read(self, path: Path) -> Iterator[Recommendation]:
        if not path.exists():
            return
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.endswith("\n"):
                    # torn tail from an interrupted append
                    logger.warning("ignoring truncated line in %s", path)
                    break
                if line.strip():
                    yield Recommendation.from_json(json.loads(line))

    def _reload(self) -> None:
        recs: dict[str, Recommendation] = {}
        for rec in self._read(self.view_path):
            recs[rec.opportunity_id] = rec
        for rec in self._read(self.log_path):
            recs[rec.opportunity_id] = rec
        self._recs = recs

    def __len__(self) -> int:
        return len(self._recs)

    def __contains__(self, opportunity_id: object) -> bool:
        return opportunity_id in self._recs

    def ids(self) -> list[str]:
        return sorted(self._recs)

    def upsert(self, rec: Recommendation) -> None:
        self.upsert_many([rec])

    def upsert_many(self, recs: Iterable[Recommendation]) -> int:
        recs = list(recs)
        for rec in recs:
            rec.validate(self.max_items)
        payload = "".join(_line(r) for r in recs)
        with self._lock:
            try:
                with self.log_path.open("a", encoding="utf-8", newline="\n") as fh:
                    fh.write(payload)
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            for rec in recs:
                self._recs[rec.opportunity_id] = rec
        return len(recs)

    def get(self, opportunity_id: str) -> Recommendation:
        try:
            return self._recs[opportunity_id]
        except KeyError:
            raise NotFound(opportunity_id) from None

    def compact(self) -> None:
        """Rewrite the latest-wins view atomically, then drop the replayed log."""
        with self._lock:
            data = "".join(_line(self._recs[k]) for k in sorted(self._recs)).encode("utf-8")
            try:
                atomic_write_bytes(self.view_path, data)
                if self.log_path.exists():
                    self.log_path.unlink()
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc

    def export(self, path: str | os.PathLike) -> None:
        data = "".join(_line(self._recs[k]) for k in sorted(self._recs)).encode("utf-8")
        atomic_write_bytes(path, data)

    def record_feedback(self, fb: FeedbackRecord) -> FeedbackRecord:
        rec = self._recs.get(fb.opportunity_id)
        if rec is None or fb.content_id not in rec.content_ids:
            raise UnknownReference(f"({fb.opportunity_id}, {fb.content_id}) was never recommended")
        if fb.submitted_at is None:
            fb = FeedbackRecord(
                fb.opportunity_id, fb.content_id, fb.verdict, fb.free_text, datetime.now(timezone.utc)
            )
        line = json.dumps(fb.to_json(), ensure_ascii=False) + "\n"
        with self._feedback_lock, self.feedback_path.open("a", encoding="utf-8", newline="\n") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
        return fb

    def feedback(self) -> list[FeedbackRecord]:
        if not self.feedback_path.exists():
            return []
        with self.feedback_path.open("r", encoding="utf-8") as fh:
            return [FeedbackRecord.from_json(json.loads(line)) for line in fh if line.strip()]


def get_recommendations(store: RecommendationStore, opportunity_id: str) -> Recommendation:
    return store.get(opportunity_id)


def lookup_payload(rec: Recommendation) -> dict[str, Any]:
    """Lookup response: the stored record plus the shareable/internal split."""
    body = rec.to_json()
    body["customer_ready"] = [it.content_id for it in rec.items if it.customer_ready]
    body["seller_only"] = [it.content_id for it in rec.items if not it.customer_ready]
    return body


def _handler(store: RecommendationStore) -> type[BaseHTTPRequestHandler]:
    class Handler(BaseHTTPRequestHandler):
        server_version = "oppmatch"

        def log_message(self, fmt: str, *args: Any) -> None:
            logger.debug("%s - %s", self.address_string(), fmt % args)

        def _send(self, status: HTTPStatus, body: dict[str, Any]) -> None:
            data = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self) -> None:
            parts = [unquote(p) for p in self.path.split("?")[0].split("/") if p]
            if parts == ["health"]:
                self._send(HTTPStatus.OK, {"status": "ok", "recommendations": len(store)})
            elif len(parts) == 2 and parts[0] == "recommendations":
                try:
                    self._send(HTTPStatus.OK, lookup_payload(store.get(parts[1])))
                except NotFound:
                    self._send(HTTPStatus.NOT_FOUND, {"error": "not_found", "opportunityid": parts[1]})
            else:
                self._send(HTTPStatus.NOT_FOUND, {"error": "no_route"})

        def do_POST(self) -> None:
            if self.path.rstrip("/") != "/feedback":
                self._send(HTTPStatus.NOT_FOUND, {"error": "no_route"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                obj = json.loads(self.rfile.read(length) or b"{}")
                fb = FeedbackRecord.from_json({**obj, "submitted_at": None})
            except (ValueError, KeyError, TypeError) as exc:
                self._send(HTTPStatus.BAD_REQUEST, {"error": "bad_request", "detail": str(exc)})
                return
            try:
                saved = store.record_feedback(fb)
            except UnknownReference as exc:
                self._send(HTTPStatus.NOT_FOUND, {"error": "unknown_reference", "detail": str(exc)})
                return
            self._send(HTTPStatus.CREATED, saved.to_json())

    return Handler


def make_server(store: RecommendationStore, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _handler(store))
    server.daemon_threads = True
    return server
