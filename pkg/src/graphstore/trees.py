"""Helpers for building trees from Python values and directories."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping, Union

from .errors import EncodeError
from .objects import TreeEntry, TreeObject, check_entry_name, load, put
from .store import Kind, ObjectId, Store

Nested = Mapping[str, Union[bytes, "Nested"]]


def tree_from_dict(store: Store, spec: Nested, mtime: int = 0) -> ObjectId:
    """Store ``{"name": b"bytes" | {...}}`` recursively; returns the tree id.

    >>> tree_from_dict(store, {"a": b"1", "d": {"b": b"2"}})  # doctest: +SKIP
    """
    entries = []
    for name in sorted(spec, key=lambda n: n.encode("utf-8")):
        value = spec[name]
        if isinstance(value, (bytes, bytearray)):
            oid, _ = store.put_object(Kind.BLOB, bytes(value))
            entries.append(TreeEntry(Kind.BLOB, oid, mtime, name))
        else:
            entries.append(TreeEntry(Kind.TREE, tree_from_dict(store, value, mtime), mtime, name))
    return put(store, TreeObject(tuple(entries)))


def write_tree(store: Store, directory: Path | str) -> ObjectId:
    """Import a directory recursively. Symlinks and special files are skipped."""
    directory = Path(directory)
    entries = []
    with os.scandir(directory) as it:
        items = sorted(it, key=lambda e: os.fsencode(e.name))
    for e in items:
        try:
            check_entry_name(e.name)
        except EncodeError as exc:
            raise EncodeError("name", f"{Path(e.path)}: {exc.reason}") from None
        if e.is_symlink():
            continue
        mtime = max(0, int(e.stat().st_mtime))
        if e.is_dir():
            entries.append(TreeEntry(Kind.TREE, write_tree(store, e.path), mtime, e.name))
        elif e.is_file():
            oid, _ = store.put_object(Kind.BLOB, Path(e.path).read_bytes())
            entries.append(TreeEntry(Kind.BLOB, oid, mtime, e.name))
    return put(store, TreeObject(tuple(entries)))


def export_tree(store: Store, tree: ObjectId, directory: Path | str) -> int:
    """Materialise ``tree`` under ``directory``; returns the number of files written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    t = load(store, tree, Kind.TREE)
    assert isinstance(t, TreeObject)
    written = 0
    for e in t.entries:
        target = directory / e.name
        if e.kind is Kind.TREE:
            written += export_tree(store, e.id, target)
        else:
            target.write_bytes(store.get_object(e.id).content)
            written += 1
        os.utime(target, (e.mtime, e.mtime))
    return written
