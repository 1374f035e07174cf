"""Named graphs and their append-only head logs.

Each graph's history is ``graphs/<name>.head``: a sequence of fixed 82-byte
records ``%016x <commit-hex>\\n`` with consecutive absolute sequence numbers.
A write is a single ``write(2)`` on an ``O_APPEND`` descriptor, so a crash can
leave at most one partial record at the tail, which readers ignore and the
next writer truncates away.
"""

from __future__ import annotations

import contextlib
import os
import re
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, TypeVar

from . import locking
from .errors import (
    BadSeq,
    CorruptHead,
    DanglingCommit,
    GraphExists,
    InvalidName,
    IoError,
    LockRequired,
    NotFound,
    StaleHead,
)
from .store import Durability, ObjectId, Store, fsync_dir

RECORD_SIZE = 82
_NAME_RE = re.compile(r"[A-Za-z0-9._-]{1,128}\Z")
_RECORD_RE = re.compile(rb"([0-9a-f]{16}) ([0-9a-f]{64})\n\Z")

T = TypeVar("T")


@dataclass(frozen=True)
class HeadRecord:
    seq: int
    commit: ObjectId

    def encode(self) -> bytes:
        return b"%016x %s\n" % (self.seq, self.commit.hex.encode())

    @classmethod
    def decode(cls, raw: bytes) -> HeadRecord:
        m = _RECORD_RE.match(raw)
        if not m:
            raise ValueError(f"malformed head record {raw[:40]!r}")
        return cls(int(m.group(1), 16), ObjectId(bytes.fromhex(m.group(2).decode())))


@dataclass(frozen=True)
class GraphRef:
    name: str
    head_path: Path
    lock_path: Path

    @property
    def base_path(self) -> Path:
        return self.head_path.with_suffix(".base")


@dataclass
class HeadFile:
    """Parsed state of a head file, tolerant of a torn tail."""

    records: list[HeadRecord]
    base: int
    size: int

    @property
    def torn_bytes(self) -> int:
        return self.size % RECORD_SIZE

    @property
    def latest_seq(self) -> int:
        return self.records[-1].seq if self.records else self.base - 1

    @property
    def latest(self) -> HeadRecord | None:
        return self.records[-1] if self.records else None


def check_graph_name(name: str) -> None:
    if not isinstance(name, str) or not _NAME_RE.match(name):
        raise InvalidName(f"graph names are 1-128 chars of [A-Za-z0-9._-]: {name!r}")


def graph_ref(store: Store, graph: str | GraphRef) -> GraphRef:
    if isinstance(graph, GraphRef):
        return graph
    check_graph_name(graph)
    d = store.graphs_dir
    return GraphRef(graph, d / f"{graph}.head", d / f"{graph}.lock")


def graph_exists(store: Store, graph: str | GraphRef) -> bool:
    return graph_ref(store, graph).head_path.exists()


def create_graph(store: Store, name: str) -> GraphRef:
    g = graph_ref(store, name)
    try:
        fd = os.open(g.head_path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o644)
    except FileExistsError:
        raise GraphExists(name) from None
    except OSError as e:
        raise IoError(str(e)) from e
    os.close(fd)
    if store.durability is not Durability.NONE:
        fsync_dir(store.graphs_dir)
    return g


def list_graphs(store: Store) -> list[str]:
    names = []
    for p in store.graphs_dir.glob("*.head"):
        name = p.name[: -len(".head")]
        if _NAME_RE.match(name):
            names.append(name)
    return sorted(names, key=lambda n: n.encode())


def read_base(g: GraphRef) -> int:
    try:
        text = g.base_path.read_text().strip()
    except FileNotFoundError:
        return 1
    if not text.isdigit() or int(text) < 1:
        raise CorruptHead(f"{g.name}: bad base file {text!r}")
    return int(text)


def read_head(store: Store, graph: str | GraphRef) -> HeadFile:
    g = graph_ref(store, graph)
    try:
        data = g.head_path.read_bytes()
    except FileNotFoundError:
        raise NotFound(f"graph {g.name!r}") from None
    base = read_base(g)
    n = len(data) // RECORD_SIZE
    records = []
    for i in range(n):
        raw = data[i * RECORD_SIZE : (i + 1) * RECORD_SIZE]
        try:
            rec = HeadRecord.decode(raw)
        except ValueError as e:
            raise CorruptHead(f"{g.name}: record {i}: {e}") from None
        expected = records[-1].seq + 1 if records else rec.seq
        if rec.seq != expected or rec.seq < 1:
            raise CorruptHead(f"{g.name}: record {i} has seq {rec.seq}, expected {expected}")
        records.append(rec)
    # Records carry absolute seqs; the base sidecar only matters for an empty
    # file (and may lag a prune interrupted between its two renames).
    if records:
        base = records[0].seq
    return HeadFile(records, base, len(data))


def read_history(
    store: Store, graph: str | GraphRef, from_seq: int | None = None, to_seq: int | None = None
) -> list[HeadRecord]:
    recs = read_head(store, graph).records
    lo = from_seq if from_seq is not None else 0
    hi = to_seq if to_seq is not None else float("inf")
    return [r for r in recs if lo <= r.seq <= hi]


def latest_record(store: Store, graph: str | GraphRef) -> HeadRecord | None:
    """Newest complete record, reading only the file's tail."""
    g = graph_ref(store, graph)
    try:
        with open(g.head_path, "rb") as f:
            size = os.fstat(f.fileno()).st_size
            n = size // RECORD_SIZE
            if n == 0:
                return None
            f.seek((n - 1) * RECORD_SIZE)
            raw = f.read(RECORD_SIZE)
    except FileNotFoundError:
        raise NotFound(f"graph {g.name!r}") from None
    try:
        return HeadRecord.decode(raw)
    except ValueError as e:
        raise CorruptHead(f"{g.name}: {e}") from None


def latest_seq(store: Store, graph: str | GraphRef) -> int:
    g = graph_ref(store, graph)
    rec = latest_record(store, g)
    return rec.seq if rec else read_base(g) - 1


def _require_lock(store: Store, g: GraphRef) -> None:
    if g.name not in store.held_locks:
        raise LockRequired(f"lock on graph {g.name!r} not held by this handle")


def append_record(store: Store, graph: str | GraphRef, expected_old_seq: int, commit: ObjectId) -> HeadRecord:
    g = graph_ref(store, graph)
    _require_lock(store, g)
    if not store.has_object(commit):
        raise DanglingCommit(f"commit {commit.hex} not in store")
    try:
        fd = os.open(g.head_path, os.O_RDWR | os.O_APPEND)
    except FileNotFoundError:
        raise NotFound(f"graph {g.name!r}") from None
    try:
        size = os.fstat(fd).st_size
        if size % RECORD_SIZE:
            # Torn tail from a crashed writer; safe to cut since we hold the lock.
            size -= size % RECORD_SIZE
            os.ftruncate(fd, size)
        if size:
            raw = os.pread(fd, RECORD_SIZE, size - RECORD_SIZE)
            try:
                current = HeadRecord.decode(raw).seq
            except ValueError as e:
                raise CorruptHead(f"{g.name}: {e}") from None
        else:
            current = read_base(g) - 1
        if current != expected_old_seq:
            raise StaleHead(g.name, expected_old_seq, current)
        rec = HeadRecord(expected_old_seq + 1, commit)
        store.step("head.before_append")
        if os.write(fd, rec.encode()) != RECORD_SIZE:
            raise IoError(f"{g.name}: short write to head file")
        if store.durability is not Durability.NONE:
            os.fsync(fd)
    except OSError as e:
        raise IoError(f"{g.name}: {e}") from e
    finally:
        os.close(fd)
    return rec


def rewind(store: Store, graph: str | GraphRef, to_seq: int) -> HeadRecord:
    """Re-append the commit recorded at ``to_seq`` as a new version."""
    g = graph_ref(store, graph)
    _require_lock(store, g)
    head = read_head(store, g)
    if not head.records or not head.records[0].seq <= to_seq <= head.latest_seq:
        raise BadSeq(f"{g.name}: seq {to_seq} outside {head.base}..{head.latest_seq}")
    target = head.records[to_seq - head.records[0].seq]
    return append_record(store, g, head.latest_seq, target.commit)


def prune(store: Store, graph: str | GraphRef, keep_last: int) -> list[HeadRecord]:
    """Drop all but the newest ``keep_last`` records; returns what remains."""
    g = graph_ref(store, graph)
    _require_lock(store, g)
    if keep_last < 1:
        raise BadSeq("keep_last must be >= 1")
    head = read_head(store, g)
    if keep_last >= len(head.records):
        return head.records
    kept = head.records[-keep_last:]
    sync = store.durability is not Durability.NONE
    _atomic_write(g.base_path, f"{kept[0].seq}\n".encode(), sync)
    _atomic_write(g.head_path, b"".join(r.encode() for r in kept), sync)
    if sync:
        fsync_dir(store.graphs_dir)
    return kept


def _atomic_write(path: Path, data: bytes, sync: bool) -> None:
    tmp = path.with_name(f".{path.name}.{uuid.uuid4().hex}")
    with open(tmp, "wb") as f:
        f.write(data)
        if sync:
            f.flush()
            os.fsync(f.fileno())
    os.replace(tmp, path)


@contextlib.contextmanager
def lock_graphs(store: Store, graphs: str | GraphRef | Iterable[str | GraphRef]) -> Iterator[list[GraphRef]]:
    """Hold the lock files of ``graphs`` for the duration of the block.

    Locks are taken in byte order of graph name so that overlapping
    multi-graph lockers cannot deadlock. Re-entrant per store handle.
    """
    if isinstance(graphs, (str, GraphRef)):
        graphs = [graphs]
    refs = {g.name: g for g in (graph_ref(store, x) for x in graphs)}
    ordered = [refs[n] for n in sorted(refs, key=lambda n: n.encode())]
    acquired: list[GraphRef] = []
    try:
        for g in ordered:
            if g.name in store.held_locks:
                continue
            locking.acquire(g.lock_path, store.holder, store.config.lock_timeout)
            store.held_locks.add(g.name)
            acquired.append(g)
        store.step("lock.acquired")
        yield ordered
    finally:
        for g in reversed(acquired):
            store.held_locks.discard(g.name)
            locking.release(g.lock_path, store.holder)


def with_lock(store: Store, graphs, body: Callable[[], T]) -> T:
    with lock_graphs(store, graphs):
        return body()
