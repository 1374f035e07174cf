"""Pluggable per-graph indexes.

An index is derived data: a pure function of store content and a graph's
head. Each lives in ``indexes/<graph>/<indexer>/`` and is considered enabled
for a graph once that directory exists (i.e. after the first build). Commits
notify enabled indexers afterwards; an indexer failure marks its index stale
and is logged there, but never fails the commit.
"""

from __future__ import annotations

import bisect
import logging
import os
import traceback
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .errors import IndexMissing, NotFound, NotRegistered
from .headlog import HeadRecord, graph_ref
from .objects import CommitObject, TreeObject, load
from .store import Kind, ObjectId, Store

logger = logging.getLogger(__name__)

STALE_MARKER = "stale"
_NO_HEAD = "0" * 64


@dataclass
class IndexStats:
    entries: int


class Indexer:
    """Base class for index plugins.

    Subclasses set ``name`` and implement ``rebuild``; ``on_commit`` defaults
    to a full rebuild, which is always correct if not always cheap.
    """

    name: str = ""

    def rebuild(self, store: Store, graph: str, head: ObjectId | None, directory: Path) -> int:
        raise NotImplementedError

    def on_commit(self, store: Store, graph: str, old: ObjectId | None, new: ObjectId, directory: Path) -> None:
        self.rebuild(store, graph, new, directory)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.build-{uuid.uuid4().hex}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def enumerate_tree(store: Store, tree: ObjectId, prefix: str = "") -> Iterator[tuple[str, Kind, ObjectId]]:
    """Every (path, kind, id) below ``tree``, depth first."""
    t = load(store, tree, Kind.TREE)
    assert isinstance(t, TreeObject)
    for e in t.entries:
        path = f"{prefix}{e.name}"
        yield path, e.kind, e.id
        if e.kind is Kind.TREE:
            yield from enumerate_tree(store, e.id, path + "/")


class PathIndexer(Indexer):
    """Maps "/"-joined paths to blob and tree ids.

    File ``paths``: a ``head <commit-hex>`` line followed by
    ``<id-hex> <path>`` lines sorted by path bytes. Directory paths carry a
    trailing "/" so they never collide with a leaf of the same name.
    """

    name = "path"
    FILE = "paths"

    def rebuild(self, store, graph, head, directory):
        mapping = {}
        if head is not None:
            c = load(store, head, Kind.COMMIT)
            assert isinstance(c, CommitObject)
            for path, kind, oid in enumerate_tree(store, c.tree):
                mapping[path + "/" if kind is Kind.TREE else path] = oid
        return self._write(directory, head, mapping)

    def on_commit(self, store, graph, old, new, directory):
        recorded, mapping = self.read(directory)
        if (directory / STALE_MARKER).exists() or recorded != old:
            self.rebuild(store, graph, new, directory)
            (directory / STALE_MARKER).unlink(missing_ok=True)
            return
        old_tree = load(store, old, Kind.COMMIT).tree if old is not None else None
        new_tree = load(store, new, Kind.COMMIT).tree
        self._apply_diff(store, old_tree, new_tree, "", mapping)
        self._write(directory, new, mapping)

    def _apply_diff(self, store, old_tree, new_tree, prefix, mapping):
        if old_tree == new_tree:
            return
        before = {e.name: e for e in load(store, old_tree, Kind.TREE).entries} if old_tree else {}
        after = {e.name: e for e in load(store, new_tree, Kind.TREE).entries}
        for name in before.keys() | after.keys():
            o, n = before.get(name), after.get(name)
            path = prefix + name
            if o and n and o.kind is n.kind is Kind.TREE:
                if o.id != n.id:
                    mapping[path + "/"] = n.id
                    self._apply_diff(store, o.id, n.id, path + "/", mapping)
                continue
            if o:
                if o.kind is Kind.TREE:
                    del mapping[path + "/"]
                    for sub, kind, _ in enumerate_tree(store, o.id, path + "/"):
                        del mapping[sub + "/" if kind is Kind.TREE else sub]
                else:
                    del mapping[path]
            if n:
                if n.kind is Kind.TREE:
                    mapping[path + "/"] = n.id
                    for sub, kind, oid in enumerate_tree(store, n.id, path + "/"):
                        mapping[sub + "/" if kind is Kind.TREE else sub] = oid
                else:
                    mapping[path] = n.id

    def _write(self, directory: Path, head: ObjectId | None, mapping: dict[str, ObjectId]) -> int:
        keys = sorted(mapping, key=lambda p: p.encode("utf-8"))
        lines = [f"head {head.hex if head else _NO_HEAD}\n"]
        lines += [f"{mapping[k].hex} {k}\n" for k in keys]
        _atomic_write(directory / self.FILE, "".join(lines).encode("utf-8"))
        return sum(1 for k in keys if not k.endswith("/"))

    def read(self, directory: Path) -> tuple[ObjectId | None, dict[str, ObjectId]]:
        try:
            text = (directory / self.FILE).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise IndexMissing(str(directory)) from None
        lines = text.splitlines()
        head_hex = lines[0].split(" ", 1)[1]
        head = None if head_hex == _NO_HEAD else ObjectId.from_hex(head_hex)
        mapping = {}
        for line in lines[1:]:
            h, path = line.split(" ", 1)
            mapping[path] = ObjectId.from_hex(h)
        return head, mapping

    def lookup(self, directory: Path, path: str) -> ObjectId | None:
        try:
            text = (directory / self.FILE).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise IndexMissing(str(directory)) from None
        lines = text.splitlines()[1:]
        paths = [line[65:].encode("utf-8") for line in lines]
        path = path.strip("/")
        for key in (path, path + "/"):
            raw = key.encode("utf-8")
            i = bisect.bisect_left(paths, raw)
            if i < len(paths) and paths[i] == raw:
                return ObjectId.from_hex(lines[i][:64])
        return None


BUILTIN: dict[str, Indexer] = {PathIndexer.name: PathIndexer()}


def register_indexer(store: Store, indexer: Indexer) -> None:
    store.indexers[indexer.name] = indexer


def registered(store: Store) -> dict[str, Indexer]:
    return {**BUILTIN, **store.indexers}


def index_dir(store: Store, graph: str, indexer_name: str) -> Path:
    return store.indexes_dir / graph_ref(store, graph).name / indexer_name


def rebuild_index(store: Store, graph: str, indexer_name: str) -> IndexStats:
    from .integrity import find_last_intact

    indexer = registered(store).get(indexer_name)
    if indexer is None:
        raise NotRegistered(indexer_name)
    if not graph_ref(store, graph).head_path.exists():
        raise NotFound(f"graph {graph!r}")
    snap = find_last_intact(store, graph)
    d = index_dir(store, graph, indexer_name)
    d.mkdir(parents=True, exist_ok=True)
    entries = indexer.rebuild(store, graph, snap.commit if snap else None, d)
    (d / STALE_MARKER).unlink(missing_ok=True)
    return IndexStats(entries)


def is_stale(store: Store, graph: str, indexer_name: str) -> bool:
    return (index_dir(store, graph, indexer_name) / STALE_MARKER).exists()


def notify_commit(store: Store, graph: str, record: HeadRecord, old: ObjectId | None = None) -> None:
    for name, indexer in registered(store).items():
        d = index_dir(store, graph, name)
        if not d.is_dir():
            continue
        try:
            indexer.on_commit(store, graph, old, record.commit, d)
        except Exception:
            logger.exception("indexer %s failed on %s seq %d", name, graph, record.seq)
            try:
                (d / STALE_MARKER).write_text(
                    f"seq {record.seq} commit {record.commit.hex}\n{traceback.format_exc()}"
                )
            except OSError:
                pass


def query_path(store: Store, graph: str, path: str) -> ObjectId | None:
    d = index_dir(store, graph, PathIndexer.name)
    indexer = registered(store).get(PathIndexer.name)
    if not isinstance(indexer, PathIndexer):
        indexer = BUILTIN[PathIndexer.name]
    return indexer.lookup(d, path)


def indexed_head(store: Store, graph: str, indexer_name: str = PathIndexer.name) -> ObjectId | None:
    """Commit the path index was built from; compare with the head to detect staleness."""
    head, _ = BUILTIN[PathIndexer.name].read(index_dir(store, graph, indexer_name))
    return head
