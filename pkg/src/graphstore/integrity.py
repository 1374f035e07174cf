"""Store audit and power-loss recovery.

``fsck`` never mutates anything. ``find_last_intact`` walks a graph's head
log from the newest record backwards and returns the first version whose
whole closure is present (and, optionally, re-hashes clean).

A version's closure here is its commit, tree and everything below the tree.
Parents are versions of their own, each judged by its own head record.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

from . import locking
from .errors import CorruptHead, CorruptObject, NotFound, ParseError
from .headlog import graph_ref, list_graphs, read_head
from .objects import load, references, walk
from .store import Kind, ObjectId, Store
from .txn import Snapshot, failed_markers, pending_markers

_EMPTY: frozenset = frozenset()


class _Auditor:
    """Memoised per-object status and bad-descendant sets over the DAG."""

    def __init__(self, store: Store, verify: bool):
        self.store = store
        self.verify = verify
        self.status: dict[ObjectId, str] = {}
        self.reason: dict[ObjectId, str] = {}
        self.refs: dict[ObjectId, list[ObjectId]] = {}
        self.bad: dict[ObjectId, frozenset] = {}
        self.dangling: set[tuple[ObjectId, ObjectId]] = set()

    def load(self, oid: ObjectId) -> str:
        st = self.status.get(oid)
        if st is not None:
            return st
        try:
            obj = self.store.get_object(oid, verify=self.verify)
            self.refs[oid] = references(obj.kind, obj.content, parents=False)
            st = "ok"
        except NotFound:
            st = "missing"
        except CorruptObject as e:
            st = "corrupt"
            self.reason[oid] = "hash_mismatch" if "hash mismatch" in str(e) else "unparseable"
        except ParseError:
            st = "corrupt"
            self.reason[oid] = "unparseable"
        self.status[oid] = st
        return st

    def bad_in_closure(self, root: ObjectId) -> frozenset:
        """Ids in ``root``'s closure that are missing or corrupt."""
        stack = [(root, False)]
        while stack:
            oid, expanded = stack.pop()
            if oid in self.bad:
                continue
            if self.load(oid) != "ok":
                self.bad[oid] = frozenset([oid])
                continue
            children = self.refs[oid]
            if not expanded:
                stack.append((oid, True))
                stack.extend((c, False) for c in children if c not in self.bad)
                continue
            parts = [self.bad.get(c, _EMPTY) for c in children]
            for c in children:
                if self.status.get(c) == "missing":
                    self.dangling.add((oid, c))
            nonempty = [p for p in parts if p]
            if not nonempty:
                self.bad[oid] = _EMPTY
            elif len(nonempty) == 1:
                self.bad[oid] = nonempty[0]
            else:
                self.bad[oid] = frozenset().union(*nonempty)
        return self.bad[root]


@dataclass
class FsckReport:
    corrupt: list[tuple[str, str]] = field(default_factory=list)
    dangling: list[tuple[str, str]] = field(default_factory=list)
    impacted: list[tuple[str, int, list[str]]] = field(default_factory=list)
    torn_heads: list[tuple[str, int]] = field(default_factory=list)
    bad_heads: list[tuple[str, str]] = field(default_factory=list)
    stale_locks: list[str] = field(default_factory=list)
    orphaned_markers: list[str] = field(default_factory=list)
    orphans: list[tuple[str, int]] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        """No damage. Orphans and stale locks are housekeeping, not damage."""
        return not (
            self.corrupt or self.dangling or self.impacted or self.torn_heads
            or self.bad_heads or self.orphaned_markers
        )

    @property
    def empty(self) -> bool:
        return self.clean and not (self.stale_locks or self.orphans)

    def corrupt_ids(self) -> set[str]:
        return {h for h, _ in self.corrupt}

    def to_text(self) -> str:
        lines = [f"corrupt {h} {why}" for h, why in self.corrupt]
        lines += [f"dangling {src} {dst}" for src, dst in self.dangling]
        lines += [f"impacted {g} {seq} {','.join(ids)}" for g, seq, ids in self.impacted]
        lines += [f"torn-head {g} {n}" for g, n in self.torn_heads]
        lines += [f"bad-head {g} {why}" for g, why in self.bad_heads]
        lines += [f"stale-lock {name}" for name in self.stale_locks]
        lines += [f"orphaned-marker {h}" for h in self.orphaned_markers]
        lines += [f"orphan {h} {age}" for h, age in self.orphans]
        return "".join(line + "\n" for line in lines)

    def to_json(self) -> str:
        return json.dumps({**asdict(self), "clean": self.clean}, indent=2, sort_keys=True)


def fsck(store: Store, verify_hashes: bool = False) -> FsckReport:
    report = FsckReport()
    audit = _Auditor(store, verify_hashes)
    now = time.time()

    stored = list(store.iter_object_paths())
    for oid, _ in stored:
        if audit.load(oid) == "corrupt":
            report.corrupt.append((oid.hex, audit.reason[oid]))

    roots: list[ObjectId] = []
    timeout = store.config.lock_timeout
    for name in list_graphs(store):
        g = graph_ref(store, name)
        try:
            head = read_head(store, g)
        except CorruptHead as e:
            report.bad_heads.append((name, str(e)))
            continue
        if head.torn_bytes:
            report.torn_heads.append((name, head.torn_bytes))
        for rec in head.records:
            roots.append(rec.commit)
            bad = audit.bad_in_closure(rec.commit)
            if bad:
                report.impacted.append((name, rec.seq, sorted(b.hex for b in bad)))

    for lock in sorted(store.graphs_dir.glob("*.lock")):
        age = locking.lock_age(lock)
        if age is not None and age >= timeout:
            report.stale_locks.append(lock.name)
    gc_lock = store.root / "gc.lock"
    age = locking.lock_age(gc_lock)
    if age is not None and age >= timeout:
        report.stale_locks.append(gc_lock.name)

    for txn_id in pending_markers(store):
        roots.append(txn_id)
        if _marker_orphaned(store, txn_id):
            report.orphaned_markers.append(txn_id.hex)
    roots.extend(failed_markers(store))

    for src, dst in sorted(audit.dangling):
        report.dangling.append((src.hex, dst.hex))

    reachable = walk(store, roots, verify=verify_hashes, parents=False).objects
    for oid, path in stored:
        if oid not in reachable:
            try:
                age = int(now - path.stat().st_mtime)
            except FileNotFoundError:
                continue
            report.orphans.append((oid.hex, age))
    return report


def _marker_orphaned(store: Store, txn_id: ObjectId) -> bool:
    """A pending marker nobody is working on: no fresh lock on any of its graphs."""
    try:
        rec = load(store, txn_id, Kind.TXN)
    except (NotFound, CorruptObject):
        return True
    for u in rec.updates:
        age = locking.lock_age(graph_ref(store, u.graph).lock_path)
        if age is not None and age < store.config.lock_timeout:
            return False
    return True


def find_last_intact(store: Store, graph: str, verify_hashes: bool = False) -> Snapshot | None:
    g = graph_ref(store, graph)
    head = read_head(store, g)
    audit = _Auditor(store, verify_hashes)
    for rec in reversed(head.records):
        if not audit.bad_in_closure(rec.commit):
            return Snapshot(g.name, rec.seq, rec.commit)
    return None
