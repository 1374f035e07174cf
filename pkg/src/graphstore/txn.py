"""Commit construction and multi-graph transactions.

Content (trees, blobs, commit objects) is written lock-free and in parallel;
only the head appends are serialised. A multi-graph commit is decided the
moment its pending marker exists: from then on recovery rolls it forward.

Protocol for updates to graphs G1 < G2 < ...:

    put commit objects          (no locks)
    lock G1, G2, ...            (byte order)
    verify every expected seq   -> StaleHead, nothing written
    put TxnRecord
    create txns/pending/<txn>   <- decision point
    append G1, G2, ...
    unlink marker, unlock
"""

from __future__ import annotations

import logging
import os
import time as _time
from dataclasses import dataclass
from typing import Iterable

from .errors import CorruptHead, CorruptObject, DanglingCommit, GraphStoreError, NotFound, StaleHead
from .headlog import (
    HeadRecord,
    append_record,
    graph_ref,
    latest_record,
    lock_graphs,
    read_head,
)
from .indexers import notify_commit
from .objects import CommitObject, TxnRecord, TxnUpdate, load, put, walk
from .store import Durability, Kind, ObjectId, Store, fsync_dir

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Snapshot:
    graph: str
    seq: int
    commit: ObjectId | None


@dataclass(frozen=True)
class Update:
    graph: str
    expected: Snapshot
    tree: ObjectId
    message: str = ""


def snapshot(store: Store, graph: str) -> Snapshot:
    """Latest complete head state of ``graph``; never takes a lock."""
    g = graph_ref(store, graph)
    rec = latest_record(store, g)
    if rec is None:
        head = read_head(store, g)
        return Snapshot(g.name, head.latest_seq, None)
    return Snapshot(g.name, rec.seq, rec.commit)


def _check_tree(store: Store, tree: ObjectId) -> None:
    try:
        obj = store.get_object(tree)
    except NotFound:
        raise DanglingCommit(f"tree {tree.hex} not in store") from None
    if obj.kind is not Kind.TREE:
        raise DanglingCommit(f"{tree.hex} is a {obj.kind.value}, not a tree")
    reach = walk(store, [tree])
    if reach.missing:
        sample = min(reach.missing).hex
        raise DanglingCommit(f"tree {tree.hex} references {len(reach.missing)} missing objects, e.g. {sample}")


def commit(store: Store, updates: Iterable[Update], time: int | None = None) -> list[HeadRecord]:
    """Advance every listed graph by one version, atomically.

    Returns the new head records in the order the updates were given.
    Raises StaleHead (nothing appended) if any graph moved past its
    expected snapshot.
    """
    updates = list(updates)
    if not updates:
        raise ValueError("commit needs at least one update")
    names = [u.graph for u in updates]
    if len(set(names)) != len(names):
        raise ValueError("each graph may appear only once per commit")
    for u in updates:
        if not graph_ref(store, u.graph).head_path.exists():
            raise NotFound(f"graph {u.graph!r}")
    if time is None:
        time = int(_time.time())

    commits: dict[str, ObjectId] = {}
    for u in updates:
        _check_tree(store, u.tree)
        parents = (u.expected.commit,) if u.expected.commit is not None else ()
        commits[u.graph] = put(store, CommitObject(u.tree, parents, time, u.message))
    store.step("commit.objects_written")

    ordered = sorted(updates, key=lambda u: u.graph.encode())
    records: dict[str, HeadRecord] = {}
    with lock_graphs(store, names):
        for u in ordered:
            head = latest_record(store, u.graph)
            current = head.seq if head else read_head(store, u.graph).latest_seq
            if current != u.expected.seq:
                raise StaleHead(u.graph, u.expected.seq, current)
        store.step("commit.verified")

        if len(ordered) == 1:
            u = ordered[0]
            records[u.graph] = append_record(store, u.graph, u.expected.seq, commits[u.graph])
            store.step("commit.appended")
        else:
            txn = TxnRecord(tuple(TxnUpdate(u.graph, u.expected.seq, commits[u.graph]) for u in ordered), time)
            txn_id = put(store, txn)
            store.step("txn.record_written")
            marker = store.pending_dir / txn_id.hex
            _create_marker(store, marker)
            store.step("txn.marker_created")
            for i, u in enumerate(ordered):
                records[u.graph] = append_record(store, u.graph, u.expected.seq, commits[u.graph])
                store.step(f"txn.appended.{i}")
            marker.unlink()
            store.step("txn.marker_removed")
    store.step("commit.unlocked")

    for u in updates:
        notify_commit(store, u.graph, records[u.graph], old=u.expected.commit)
    return [records[u.graph] for u in updates]


def commit_one(store: Store, graph: str, tree: ObjectId, message: str = "", time: int | None = None) -> HeadRecord:
    """Single-graph commit on top of whatever the head currently is."""
    return commit(store, [Update(graph, snapshot(store, graph), tree, message)], time)[0]


def _create_marker(store: Store, marker) -> None:
    fd = os.open(marker, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o644)
    if store.durability is not Durability.NONE:
        os.fsync(fd)
    os.close(fd)
    if store.durability is not Durability.NONE:
        fsync_dir(marker.parent)


def pending_markers(store: Store) -> list[ObjectId]:
    out = []
    try:
        names = sorted(os.listdir(store.pending_dir))
    except FileNotFoundError:
        return out
    for name in names:
        try:
            out.append(ObjectId.from_hex(name))
        except ValueError:
            continue
    return out


def failed_markers(store: Store) -> list[ObjectId]:
    out = []
    try:
        names = sorted(os.listdir(store.failed_dir))
    except FileNotFoundError:
        return out
    for name in names:
        try:
            out.append(ObjectId.from_hex(name))
        except ValueError:
            continue
    return out


def _archive(store: Store, txn_id: ObjectId, why: str) -> None:
    store.failed_dir.mkdir(parents=True, exist_ok=True)
    os.replace(store.pending_dir / txn_id.hex, store.failed_dir / txn_id.hex)
    logger.warning("abandoned transaction %s: %s", txn_id.hex, why)


def recover_pending(store: Store) -> int:
    """Roll forward every transaction with a pending marker.

    Returns how many transactions needed at least one append. Transactions
    whose graphs have moved on with different commits (only possible after a
    crashed holder's lock was broken) are archived under ``txns/failed/``.
    """
    rolled = 0
    for txn_id in pending_markers(store):
        marker = store.pending_dir / txn_id.hex
        try:
            rec = load(store, txn_id, Kind.TXN)
        except (NotFound, CorruptObject) as e:
            _archive(store, txn_id, f"unreadable record ({e})")
            continue
        todo: list[TxnUpdate] = []
        why = None
        with lock_graphs(store, [u.graph for u in rec.updates]):
            if not marker.exists():
                continue  # its owner finished while we waited for the locks
            for u in rec.updates:
                try:
                    head = read_head(store, u.graph)
                except (NotFound, CorruptHead) as e:
                    why = f"graph {u.graph}: {e}"
                    break
                target = u.expected_old_seq + 1
                at = target - head.base
                if head.records and 0 <= at < len(head.records):
                    if head.records[at].commit == u.commit:
                        continue
                    why = f"graph {u.graph} diverged at seq {target}"
                    break
                if head.latest_seq == u.expected_old_seq:
                    todo.append(u)
                    continue
                why = f"graph {u.graph} at seq {head.latest_seq}, expected {u.expected_old_seq}"
                break
            if why is not None:
                _archive(store, txn_id, why)
                continue
            appended = []
            for u in todo:
                appended.append((u, append_record(store, u.graph, u.expected_old_seq, u.commit)))
            marker.unlink()
        if todo:
            rolled += 1
            logger.info("rolled forward transaction %s (%d appends)", txn_id.hex, len(todo))
        for u, r in appended:
            prev = None
            try:
                prev = load(store, u.commit, Kind.COMMIT).parents[:1]
            except GraphStoreError:
                pass
            notify_commit(store, u.graph, r, old=prev[0] if prev else None)
    return rolled
