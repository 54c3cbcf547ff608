"""Minimal JSON-over-HTTP client shared by the external providers."""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.error
import urllib.request
from typing import Any

from .errors import ProviderUnavailable

logger = logging.getLogger(__name__)


class JsonEndpoint:
    def __init__(
        self,
        url: str,
        timeout: float = 30.0,
        retries: int = 2,
        max_in_flight: int = 4,
        api_key: str | None = None,
        backoff: float = 0.2,
    ):
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._api_key = api_key
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))

    def post(self, payload: dict[str, Any]) -> dict[str, Any]:
        data = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            request = urllib.request.Request(self.url, data=data, headers=headers, method="POST")
            try:
                with self._slots, urllib.request.urlopen(request, timeout=self.timeout) as resp:
                    body = json.loads(resp.read().decode("utf-8"))
                if not isinstance(body, dict):
                    raise ValueError("response is not a JSON object")
                return body
            except urllib.error.HTTPError as exc:
                last = exc
                if exc.code < 500 and exc.code != 429:
                    break
            except (urllib.error.URLError, TimeoutError, OSError, ValueError) as exc:
                last = exc
            logger.warning("POST %s failed (attempt %d): %s", self.url, attempt + 1, last)
            if attempt < self.retries:
                time.sleep(self.backoff * (2**attempt))
        raise ProviderUnavailable(f"{self.url}: {last}")
