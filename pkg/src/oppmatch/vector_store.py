"""Content embedding store with change-detecting refresh and a binary file format.

File layout (little-endian)::

    header   magic "OMEB" | format u16 | dim u32 | count u64 | version u64 | built_at i64 (us since epoch)
    id table count x (len u32 | utf-8 id | prompt_hash u64), sorted by id
    vectors  count x dim float32

Writes go to a temp file that is renamed over the target.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .catalog import EPOCH, CatalogSnapshot, ContentDoc
from .embedding import EmbeddingProvider, EmbeddingVector
from .errors import DimensionMismatch, EmptyPrompt, StoreFormatError
from .prompts import Prompt, build_content_prompt

MAGIC = b"OMEB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIQQq")
_ID_LEN = struct.Struct("<I")
_HASH = struct.Struct("<Q")


def _us(ts: datetime) -> int:
    delta = ts.astimezone(timezone.utc) - EPOCH
    return (delta.days * 86_400 + delta.seconds) * 1_000_000 + delta.microseconds


def _from_us(us: int) -> datetime:
    return EPOCH + timedelta(microseconds=us)


class StoreView:
    """Immutable read view of exactly one store version."""

    __slots__ = ("dim", "version", "built_at", "ids", "hashes", "matrix", "_row")

    def __init__(
        self,
        dim: int,
        version: int,
        built_at: datetime,
        ids: Sequence[str],
        hashes: Sequence[int],
        matrix: np.ndarray,
    ):
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        matrix = np.ascontiguousarray(np.asarray(matrix, dtype=np.float32).reshape(len(ids), dim)[order])
        matrix.setflags(write=False)
        self.dim = dim
        self.version = version
        self.built_at = built_at
        self.ids = tuple(ids[i] for i in order)
        self.hashes = tuple(int(hashes[i]) for i in order)
        self.matrix = matrix
        self._row = {cid: i for i, cid in enumerate(self.ids)}
        if len(self._row) != len(self.ids):
            raise StoreFormatError("duplicate content id in store")

    @classmethod
    def empty(cls, dim: int) -> "StoreView":
        return cls(dim, 0, EPOCH, [], [], np.zeros((0, dim), dtype=np.float32))

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, content_id: object) -> bool:
        return content_id in self._row

    def row(self, content_id: str) -> int:
        return self._row[content_id]

    def prompt_hash(self, content_id: str) -> int:
        return self.hashes[self._row[content_id]]

    def get(self, content_id: str) -> EmbeddingVector:
        i = self._row[content_id]
        return EmbeddingVector(self.matrix[i], content_id, self.hashes[i])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StoreView):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash((self.version, self.ids))

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, self.dim, len(self.ids), self.version, _us(self.built_at)))
        for cid, h in zip(self.ids, self.hashes):
            raw = cid.encode("utf-8")
            buf.write(_ID_LEN.pack(len(raw)))
            buf.write(raw)
            buf.write(_HASH.pack(h))
        buf.write(self.matrix.astype("<f4", copy=False).tobytes(order="C"))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "StoreView":
        if len(data) < _HEADER.size:
            raise StoreFormatError("truncated header")
        magic, fmt, dim, count, version, built = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise StoreFormatError("bad magic")
        if fmt != FORMAT_VERSION:
            raise StoreFormatError(f"unsupported format version {fmt}")
        pos = _HEADER.size
        ids: list[str] = []
        hashes: list[int] = []
        try:
            for _ in range(count):
                (n,) = _ID_LEN.unpack_from(data, pos)
                pos += _ID_LEN.size
                ids.append(data[pos : pos + n].decode("utf-8"))
                pos += n
                (h,) = _HASH.unpack_from(data, pos)
                hashes.append(h)
                pos += _HASH.size
        except struct.error as exc:
            raise StoreFormatError(f"truncated id table: {exc}") from exc
        need = count * dim * 4
        if len(data) - pos != need:
            raise StoreFormatError(f"vector block is {len(data) - pos} bytes, expected {need}")
        matrix = np.frombuffer(data, dtype="<f4", count=count * dim, offset=pos).reshape(count, dim)
        return cls(dim, version, _from_us(built), ids, hashes, matrix)


@dataclass(frozen=True)
class RefreshStats:
    new: int = 0
    changed: int = 0
    unchanged: int = 0
    removed: int = 0
    skipped: int = 0
    version: int = 0

    @property
    def mutated(self) -> bool:
        return self.new + self.changed + self.removed > 0

    def to_json(self) -> dict:
        return {
            "new": self.new,
            "changed": self.changed,
            "unchanged": self.unchanged,
            "removed": self.removed,
            "skipped": self.skipped,
            "version": self.version,
        }


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class EmbeddingStore:
    """Single-writer store; readers take immutable snapshots."""

    def __init__(self, dim: int, view: StoreView | None = None):
        if view is not None and view.dim != dim:
            raise DimensionMismatch(f"view dim {view.dim} != store dim {dim}")
        self.dim = dim
        self._view = view or StoreView.empty(dim)

    @property
    def version(self) -> int:
        return self._view.version

    @property
    def built_at(self) -> datetime:
        return self._view.built_at

    def snapshot(self) -> StoreView:
        return self._view

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_bytes(path, self._view.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EmbeddingStore":
        view = StoreView.from_bytes(Path(path).read_bytes())
        return cls(view.dim, view)

    @classmethod
    def open(cls, path: str | os.PathLike, dim: int) -> "EmbeddingStore":
        if Path(path).exists():
            store = cls.load(path)
            if store.dim != dim:
                raise DimensionMismatch(f"store at {path} has dim {store.dim}, expected {dim}")
            return store
        return cls(dim)

    def _swap(self, view: StoreView) -> None:
        self._view = view


def refresh_contents(
    store: EmbeddingStore,
    catalog: CatalogSnapshot[ContentDoc],
    provider: EmbeddingProvider,
    batch_size: int = 256,
    clock: Callable[[], datetime] | None = None,
) -> RefreshStats:
    """Re-embed only new or changed documents and purge ones no longer in the catalog.

    The store is swapped to the new version only after every embedding call
    succeeded, so a provider failure leaves it untouched.
    """
    if provider.dim != store.dim:
        raise DimensionMismatch(f"provider dim {provider.dim} != store dim {store.dim}")
    old = store.snapshot()
    todo: list[Prompt] = []
    keep_rows: dict[str, tuple[int, np.ndarray]] = {}
    new = changed = unchanged = skipped = 0
    for doc in catalog:
        try:
            prompt = build_content_prompt(doc)
        except EmptyPrompt:
            skipped += 1
            continue
        if doc.content_id in old:
            if old.prompt_hash(doc.content_id) == prompt.prompt_hash:
                unchanged += 1
                keep_rows[doc.content_id] = (prompt.prompt_hash, old.matrix[old.row(doc.content_id)])
                continue
            changed += 1
        else:
            new += 1
        todo.append(prompt)
    live = set(keep_rows) | {p.source_id for p in todo}
    removed = sum(1 for cid in old.ids if cid not in live)

    if new + changed + removed == 0:
        return RefreshStats(0, 0, unchanged, 0, skipped, old.version)

    rows = dict(keep_rows)
    for start in range(0, len(todo), batch_size):
        batch = todo[start : start + batch_size]
        for vec in provider.embed_batch(batch):
            rows[vec.key] = (vec.prompt_hash, vec.values)

    ids = sorted(rows)
    matrix = np.stack([rows[cid][1] for cid in ids]) if ids else np.zeros((0, store.dim), np.float32)
    now = clock() if clock else datetime.now(timezone.utc)
    view = StoreView(
        store.dim,
        old.version + 1,
        now,
        ids,
        [rows[cid][0] for cid in ids],
        matrix,
    )
    store._swap(view)
    return RefreshStats(new, changed, unchanged, removed, skipped, view.version)


def entries(view: StoreView) -> Iterable[tuple[str, int, np.ndarray]]:
    for i, cid in enumerate(view.ids):
        yield cid, view.hashes[i], view.matrix[i]
