"""Domain records for catalog documents and sales opportunities, plus their line-delimited loaders.

Both files hold one JSON object per line.  Field names are lowercase and
follow the CRM export spelling (``opportunityid``, ``salesplay``, ...).
Malformed lines are skipped and counted; duplicate ids abort the load.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from types import MappingProxyType
from typing import Any, Generic, Iterable, Iterator, Mapping, TypeVar, Union

from .errors import DuplicateId, MalformedRecord

logger = logging.getLogger(__name__)

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

_WS = re.compile(r"\s+")


def normalize_field(raw: str | None) -> str:
    """Casefold, trim and collapse internal whitespace runs to one space."""
    if not raw:
        return ""
    return _WS.sub(" ", raw).strip().casefold()


def _clean(raw: Any) -> str | None:
    # optional text: whitespace-only collapses to absent
    if raw is None:
        return None
    if not isinstance(raw, str):
        raise TypeError(f"expected text, got {type(raw).__name__}")
    text = _WS.sub(" ", raw).strip()
    return text or None


def parse_timestamp(raw: Any) -> datetime:
    if raw is None:
        return EPOCH
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return datetime.fromtimestamp(raw, tz=timezone.utc)
    if not isinstance(raw, str):
        raise TypeError(f"bad timestamp {raw!r}")
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _as_bool(raw: Any, default: bool) -> bool:
    if raw is None:
        return default
    if isinstance(raw, bool):
        return raw
    if isinstance(raw, str) and raw.strip().lower() in {"true", "false", "1", "0", "yes", "no"}:
        return raw.strip().lower() in {"true", "1", "yes"}
    raise TypeError(f"expected boolean, got {raw!r}")


@dataclass(frozen=True)
class ContentDoc:
    content_id: str
    name: str = ""
    description: str = ""
    solution_area: str | None = None
    product: str | None = None
    sales_stage: str | None = None
    area: str | None = None
    customer_ready: bool = False
    published: bool = True
    last_modified: datetime = EPOCH

    @property
    def filter_key(self) -> tuple[str, str, str]:
        """Normalized (sales stage, area, solution area); empty string means absent."""
        return (
            normalize_field(self.sales_stage),
            normalize_field(self.area),
            normalize_field(self.solution_area),
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "contentid": self.content_id,
            "name": self.name,
            "description": self.description,
            "solutionarea": self.solution_area,
            "product": self.product,
            "salesstage": self.sales_stage,
            "area": self.area,
            "customerready": self.customer_ready,
            "published": self.published,
            "lastmodified": format_timestamp(self.last_modified),
        }


# ordered list of the properties whose change makes an opportunity "delta"
CRITICAL_FIELDS = (
    "opportunity_id",
    "opportunity_name",
    "sales_play",
    "sales_stage_name",
    "primary_product",
    "segment",
    "area_name",
)


@dataclass(frozen=True)
class Opportunity:
    opportunity_id: str
    opportunity_name: str = ""
    sales_play: str | None = None
    sales_stage_name: str | None = None
    primary_product: str | None = None
    segment: str | None = None
    area_name: str | None = None
    solution_area: str | None = None
    snapshot_time: datetime = EPOCH
    # non-critical passthrough columns (status notes, owner, ...)
    extra: Mapping[str, Any] = field(default_factory=dict, compare=True, hash=False)

    @property
    def filter_key(self) -> tuple[str, str, str]:
        return (
            normalize_field(self.sales_stage_name),
            normalize_field(self.area_name),
            normalize_field(self.solution_area),
        )

    def critical_tuple(self) -> tuple[str, ...]:
        return tuple(normalize_field(getattr(self, name)) for name in CRITICAL_FIELDS)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "opportunityid": self.opportunity_id,
            "opportunityname": self.opportunity_name,
            "salesplay": self.sales_play,
            "salesstagename": self.sales_stage_name,
            "primaryproduct": self.primary_product,
            "segment": self.segment,
            "areaname": self.area_name,
            "solutionarea": self.solution_area,
            "snapshottime": format_timestamp(self.snapshot_time),
        }
        for key in sorted(self.extra):
            out.setdefault(key, self.extra[key])
        return out


R = TypeVar("R", ContentDoc, Opportunity)


@dataclass(frozen=True)
class LoadStats:
    read: int = 0
    loaded: int = 0
    dropped_unpublished: int = 0
    dropped_closed: int = 0
    dropped_malformed: int = 0
    malformed_lines: tuple[int, ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {
            "read": self.read,
            "loaded": self.loaded,
            "unpublished": self.dropped_unpublished,
            "closed": self.dropped_closed,
            "malformed": self.dropped_malformed,
            "malformed_lines": list(self.malformed_lines),
        }


@dataclass(frozen=True)
class CatalogSnapshot(Generic[R]):
    """Immutable id-keyed collection of records; ids iterate in sorted order."""

    records: Mapping[str, R]
    snapshot_time: datetime
    source_uri: str
    stats: LoadStats = LoadStats()

    def __post_init__(self) -> None:
        ordered = {key: self.records[key] for key in sorted(self.records)}
        object.__setattr__(self, "records", MappingProxyType(ordered))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[R]:
        return iter(self.records.values())

    def __contains__(self, record_id: object) -> bool:
        return record_id in self.records

    def __getitem__(self, record_id: str) -> R:
        return self.records[record_id]

    def ids(self) -> list[str]:
        return list(self.records)

    def replace(self, records: Iterable[R]) -> "CatalogSnapshot[R]":
        """New snapshot with the given records; snapshot time never moves backwards."""
        recs = list(records)
        built = _snapshot_time(recs)
        return CatalogSnapshot(
            records={_record_id(r): r for r in recs},
            snapshot_time=max(built, self.snapshot_time),
            source_uri=self.source_uri,
        )


Source = Union[str, os.PathLike, Iterable[str]]


def _lines(source: Source) -> tuple[Iterator[str], str]:
    if isinstance(source, (str, os.PathLike)):
        path = Path(source)

        def gen() -> Iterator[str]:
            with path.open("r", encoding="utf-8") as fh:
                yield from fh

        return gen(), path.resolve().as_uri()
    return iter(source), "stream:"


def _record_id(rec: ContentDoc | Opportunity) -> str:
    return rec.content_id if isinstance(rec, ContentDoc) else rec.opportunity_id


def _snapshot_time(records: Iterable[ContentDoc | Opportunity]) -> datetime:
    times = [
        r.last_modified if isinstance(r, ContentDoc) else r.snapshot_time for r in records
    ]
    return max(times, default=EPOCH)


def _required_id(obj: Mapping[str, Any], *keys: str) -> str:
    for key in keys:
        value = obj.get(key)
        if isinstance(value, str) and value.strip():
            return value.strip()
        if isinstance(value, int) and not isinstance(value, bool):
            return str(value)
    raise ValueError(f"missing {keys[0]}")


def content_from_json(obj: Mapping[str, Any]) -> ContentDoc:
    return ContentDoc(
        content_id=_required_id(obj, "contentid", "content_id"),
        name=_clean(obj.get("name")) or "",
        description=_clean(obj.get("description")) or "",
        solution_area=_clean(obj.get("solutionarea")),
        product=_clean(obj.get("product")),
        sales_stage=_clean(obj.get("salesstage")),
        area=_clean(obj.get("area")),
        customer_ready=_as_bool(obj.get("customerready"), False),
        published=_as_bool(obj.get("published"), True),
        last_modified=parse_timestamp(obj.get("lastmodified")),
    )


_OPP_KEYS = {
    "opportunityid", "opportunity_id", "opportunityname", "salesplay", "salesstagename",
    "primaryproduct", "segment", "areaname", "solutionarea", "snapshottime",
}


def opportunity_from_json(obj: Mapping[str, Any]) -> Opportunity:
    extra = {k: v for k, v in obj.items() if k not in _OPP_KEYS}
    return Opportunity(
        opportunity_id=_required_id(obj, "opportunityid", "opportunity_id"),
        opportunity_name=_clean(obj.get("opportunityname")) or "",
        sales_play=_clean(obj.get("salesplay")),
        sales_stage_name=_clean(obj.get("salesstagename")),
        primary_product=_clean(obj.get("primaryproduct")),
        segment=_clean(obj.get("segment")),
        area_name=_clean(obj.get("areaname")),
        solution_area=_clean(obj.get("solutionarea")),
        snapshot_time=parse_timestamp(obj.get("snapshottime")),
        extra=MappingProxyType(extra),
    )


def _load(source: Source, parse, keep) -> CatalogSnapshot:
    lines, uri = _lines(source)
    records: dict[str, Any] = {}
    read = unpublished = closed = 0
    malformed: list[int] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        read += 1
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("record is not an object")
            rec = parse(obj)
        except (ValueError, TypeError) as exc:
            err = MalformedRecord(line_no, str(exc))
            logger.warning("skipping malformed record: %s", err)
            malformed.append(line_no)
            continue
        verdict = keep(obj, rec)
        if verdict == "unpublished":
            unpublished += 1
            continue
        if verdict == "closed":
            closed += 1
            continue
        rid = _record_id(rec)
        if rid in records:
            raise DuplicateId(f"duplicate id {rid!r} at line {line_no}")
        records[rid] = rec
    stats = LoadStats(
        read=read,
        loaded=len(records),
        dropped_unpublished=unpublished,
        dropped_closed=closed,
        dropped_malformed=len(malformed),
        malformed_lines=tuple(malformed),
    )
    logger.info("load summary %s", json.dumps({"source": uri, **stats.to_json()}))
    return CatalogSnapshot(
        records=records,
        snapshot_time=_snapshot_time(records.values()),
        source_uri=uri,
        stats=stats,
    )


def load_content_catalog(source: Source) -> CatalogSnapshot[ContentDoc]:
    """Load published documents; unpublished rows are dropped and counted."""
    return _load(
        source,
        content_from_json,
        lambda obj, rec: None if rec.published else "unpublished",
    )


def _is_open(obj: Mapping[str, Any]) -> bool:
    status = obj.get("status", obj.get("statecode"))
    if status is None:
        return True
    return normalize_field(str(status)) == "open"


def load_opportunity_snapshot(source: Source) -> CatalogSnapshot[Opportunity]:
    """Load opportunities, keeping only open ones when a status column is present."""
    return _load(
        source,
        opportunity_from_json,
        lambda obj, rec: None if _is_open(obj) else "closed",
    )


def write_jsonl(path: str | os.PathLike, rows: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=False) + "\n")
