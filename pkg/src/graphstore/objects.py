"""Canonical codecs for trees, commits and transaction records, plus DAG walks.

All three encodings are line-oriented ASCII/UTF-8 and strictly canonical:
decoding rejects anything that would not re-encode to the same bytes, so one
logical value can never have two ids.

    tree    <kind> <id-hex> <mtime> <name>\\n   (sorted by name bytes)
    commit  tree <hex>\\n (parent <hex>\\n)* time <n>\\n \\n <message>
    txn     (graph <name> <old-seq> <commit-hex>\\n)+ time <n>\\n
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Union

from .errors import CorruptObject, EncodeError, NotFound, ParseError
from .store import Kind, ObjectId, Store

GRAPH_NAME_RE = re.compile(r"[A-Za-z0-9._-]{1,128}\Z")
_DECIMAL = re.compile(rb"(0|[1-9][0-9]*)\Z")
_HEX64 = re.compile(rb"[0-9a-f]{64}\Z")


@dataclass(frozen=True)
class TreeEntry:
    kind: Kind
    id: ObjectId
    mtime: int
    name: str


@dataclass(frozen=True)
class TreeObject:
    entries: tuple[TreeEntry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def get(self, name: str) -> TreeEntry | None:
        for e in self.entries:
            if e.name == name:
                return e
        return None


@dataclass(frozen=True)
class CommitObject:
    tree: ObjectId
    parents: tuple[ObjectId, ...] = ()
    time: int = 0
    message: str = ""

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))


@dataclass(frozen=True)
class TxnUpdate:
    graph: str
    expected_old_seq: int
    commit: ObjectId


@dataclass(frozen=True)
class TxnRecord:
    updates: tuple[TxnUpdate, ...]
    time: int = 0

    def __post_init__(self):
        object.__setattr__(self, "updates", tuple(self.updates))


GraphObject = Union[TreeObject, CommitObject, TxnRecord]


def check_entry_name(name: str) -> bytes:
    if not isinstance(name, str) or not name:
        raise EncodeError("name", "empty")
    if "/" in name or "\0" in name or "\n" in name:
        raise EncodeError("name", f"forbidden character in {name!r}")
    raw = name.encode("utf-8")
    if len(raw) > 255:
        raise EncodeError("name", f"longer than 255 bytes: {name[:32]!r}…")
    return raw


def _check_uint(field_name: str, value: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise EncodeError(field_name, f"must be a non-negative integer, got {value!r}")


def encode_object(obj: GraphObject) -> tuple[Kind, bytes]:
    if isinstance(obj, TreeObject):
        return Kind.TREE, _encode_tree(obj)
    if isinstance(obj, CommitObject):
        return Kind.COMMIT, _encode_commit(obj)
    if isinstance(obj, TxnRecord):
        return Kind.TXN, _encode_txn(obj)
    raise TypeError(f"cannot encode {type(obj).__name__}")


def _encode_tree(tree: TreeObject) -> bytes:
    out = []
    prev = None
    for e in tree.entries:
        if Kind(e.kind) not in (Kind.BLOB, Kind.TREE):
            raise EncodeError("kind", f"tree entries are blob or tree, got {e.kind}")
        _check_uint("mtime", e.mtime)
        raw = check_entry_name(e.name)
        if prev is not None and raw <= prev:
            raise EncodeError("entries", "duplicate name" if raw == prev else "unsorted")
        prev = raw
        out.append(b"%s %s %d %s\n" % (Kind(e.kind).value.encode(), e.id.hex.encode(), e.mtime, raw))
    return b"".join(out)


def _encode_commit(c: CommitObject) -> bytes:
    _check_uint("time", c.time)
    lines = [b"tree %s\n" % c.tree.hex.encode()]
    lines += [b"parent %s\n" % p.hex.encode() for p in c.parents]
    lines.append(b"time %d\n\n" % c.time)
    return b"".join(lines) + c.message.encode("utf-8")


def _encode_txn(t: TxnRecord) -> bytes:
    if not t.updates:
        raise EncodeError("updates", "at least one update required")
    _check_uint("time", t.time)
    lines = []
    prev = None
    for u in t.updates:
        if not GRAPH_NAME_RE.match(u.graph):
            raise EncodeError("graph", f"invalid graph name {u.graph!r}")
        _check_uint("expected_old_seq", u.expected_old_seq)
        raw = u.graph.encode("ascii")
        if prev is not None and raw <= prev:
            raise EncodeError("updates", "duplicate graph" if raw == prev else "unsorted")
        prev = raw
        lines.append(b"graph %s %d %s\n" % (raw, u.expected_old_seq, u.commit.hex.encode()))
    lines.append(b"time %d\n" % t.time)
    return b"".join(lines)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def at_end(self) -> bool:
        return self.pos >= len(self.data)

    def line(self) -> tuple[int, bytes]:
        start = self.pos
        nl = self.data.find(b"\n", start)
        if nl < 0:
            raise ParseError(start, "unterminated line")
        self.pos = nl + 1
        return start, self.data[start:nl]


def _uint(offset: int, raw: bytes, what: str) -> int:
    if not _DECIMAL.match(raw):
        raise ParseError(offset, f"non-canonical {what} {raw[:24]!r}")
    return int(raw)


def _oid(offset: int, raw: bytes) -> ObjectId:
    if not _HEX64.match(raw):
        raise ParseError(offset, f"bad object id {raw[:70]!r}")
    return ObjectId(bytes.fromhex(raw.decode()))


def decode_object(kind: Kind | str, content: bytes) -> GraphObject:
    kind = Kind(kind)
    if kind is Kind.TREE:
        return _decode_tree(content)
    if kind is Kind.COMMIT:
        return _decode_commit(content)
    if kind is Kind.TXN:
        return _decode_txn(content)
    raise ParseError(0, "blobs have no structure to decode")


def _decode_tree(data: bytes) -> TreeObject:
    cur = _Cursor(data)
    entries = []
    prev = None
    while not cur.at_end():
        off, line = cur.line()
        parts = line.split(b" ", 3)
        if len(parts) != 4:
            raise ParseError(off, "tree entry needs 4 fields")
        kind_raw, id_raw, mtime_raw, name_raw = parts
        if kind_raw not in (b"blob", b"tree"):
            raise ParseError(off, f"bad entry kind {kind_raw!r}")
        oid = _oid(off + len(kind_raw) + 1, id_raw)
        mtime = _uint(off + 66 + len(kind_raw), mtime_raw, "mtime")
        name_off = off + len(line) - len(name_raw)
        try:
            name = name_raw.decode("utf-8")
            check_entry_name(name)
        except (UnicodeDecodeError, EncodeError) as e:
            raise ParseError(name_off, f"bad entry name: {e}") from None
        if prev is not None and name_raw <= prev:
            raise ParseError(name_off, "duplicate name" if name_raw == prev else "entries not sorted")
        prev = name_raw
        entries.append(TreeEntry(Kind(kind_raw.decode()), oid, mtime, name))
    return TreeObject(tuple(entries))


def _decode_commit(data: bytes) -> CommitObject:
    cur = _Cursor(data)
    off, line = cur.line()
    if not line.startswith(b"tree "):
        raise ParseError(off, "expected 'tree' line")
    tree = _oid(off + 5, line[5:])
    parents = []
    while True:
        off, line = cur.line()
        if line.startswith(b"parent "):
            parents.append(_oid(off + 7, line[7:]))
            continue
        if line.startswith(b"time "):
            time = _uint(off + 5, line[5:], "time")
            break
        raise ParseError(off, "expected 'parent' or 'time' line")
    off, line = cur.line()
    if line != b"":
        raise ParseError(off, "missing blank separator line")
    try:
        message = data[cur.pos :].decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(cur.pos + e.start, "message is not UTF-8") from None
    return CommitObject(tree, tuple(parents), time, message)


def _decode_txn(data: bytes) -> TxnRecord:
    cur = _Cursor(data)
    updates = []
    prev = None
    while True:
        off, line = cur.line()
        if line.startswith(b"time "):
            time = _uint(off + 5, line[5:], "time")
            break
        parts = line.split(b" ")
        if len(parts) != 4 or parts[0] != b"graph":
            raise ParseError(off, "expected 'graph' or 'time' line")
        _, name_raw, seq_raw, id_raw = parts
        if not GRAPH_NAME_RE.match(name_raw.decode("latin-1")):
            raise ParseError(off + 6, f"bad graph name {name_raw!r}")
        if prev is not None and name_raw <= prev:
            raise ParseError(off + 6, "duplicate graph" if name_raw == prev else "updates not sorted")
        prev = name_raw
        seq = _uint(off + 7 + len(name_raw), seq_raw, "seq")
        oid = _oid(off + len(line) - 64, id_raw)
        updates.append(TxnUpdate(name_raw.decode("ascii"), seq, oid))
    if not cur.at_end():
        raise ParseError(cur.pos, "trailing bytes after 'time' line")
    if not updates:
        raise ParseError(0, "transaction has no updates")
    return TxnRecord(tuple(updates), time)


def put(store: Store, obj: GraphObject) -> ObjectId:
    """Encode and store a structured object; returns its id."""
    kind, content = encode_object(obj)
    return store.put_object(kind, content)[0]


def load(store: Store, oid: ObjectId, expect: Kind | None = None) -> GraphObject:
    obj = store.get_object(oid)
    if expect is not None and obj.kind is not expect:
        raise CorruptObject(f"{oid.hex}: expected {expect.value}, found {obj.kind.value}")
    try:
        return decode_object(obj.kind, obj.content)
    except ParseError as e:
        raise CorruptObject(f"{oid.hex}: {e}") from None


def references(kind: Kind, content: bytes, *, parents: bool = True) -> list[ObjectId]:
    """Ids an object points at; blobs point at nothing.

    With ``parents=False`` a commit yields only its tree. Every parent of a
    commit in a head log is itself a head record until it is pruned, so
    store-wide audits treat each record as its own root and walk this
    narrower "version closure" instead.
    """
    if kind is Kind.BLOB:
        return []
    obj = decode_object(kind, content)
    if isinstance(obj, TreeObject):
        return [e.id for e in obj.entries]
    if isinstance(obj, CommitObject):
        return [obj.tree, *obj.parents] if parents else [obj.tree]
    return [u.commit for u in obj.updates]


@dataclass
class Reach:
    objects: set[ObjectId] = field(default_factory=set)
    missing: set[ObjectId] = field(default_factory=set)
    corrupt: set[ObjectId] = field(default_factory=set)


def walk(
    store: Store, roots: Iterable[ObjectId], *, verify: bool = False, stop: set | None = None, parents: bool = True
) -> Reach:
    """Transitive reachability from ``roots``.

    Present objects land in ``objects``; referenced-but-absent ids in
    ``missing``; objects that exist but cannot be parsed (or fail
    re-hashing when ``verify``) in both ``objects`` and ``corrupt``, and
    are not descended into. Ids in ``stop`` are neither reported nor
    expanded. ``parents`` is passed through to :func:`references`.
    """
    reach = Reach()
    stack = list(roots)
    seen: set[ObjectId] = set()
    stop = stop or set()
    while stack:
        oid = stack.pop()
        if oid in seen or oid in stop:
            continue
        seen.add(oid)
        try:
            obj = store.get_object(oid, verify=verify)
            refs = references(obj.kind, obj.content, parents=parents)
        except NotFound:
            reach.missing.add(oid)
            continue
        except (CorruptObject, ParseError):
            reach.objects.add(oid)
            reach.corrupt.add(oid)
            continue
        reach.objects.add(oid)
        stack.extend(refs)
    return reach


def closure(store: Store, roots: Iterable[ObjectId]) -> set[ObjectId]:
    return walk(store, roots).objects
