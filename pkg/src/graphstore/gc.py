"""Mark-and-sweep collection of unreachable objects.

Roots are every record of every head log (full history, so rewinds stay
possible), plus the records named by pending and failed transaction markers.
Parent links are not followed: each retained record is a root in its own
right, and pruned versions must become collectable.
Writers never lock against GC; instead, anything younger than the grace
window survives, which covers content written but not yet referenced by a
head append.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass

from . import locking
from .headlog import list_graphs, read_head
from .objects import walk
from .store import ObjectId, Store
from .txn import failed_markers, pending_markers

logger = logging.getLogger(__name__)


@dataclass
class GcReport:
    examined: int = 0
    deleted: int = 0
    retained_by_grace: int = 0
    errors: int = 0
    temp_removed: int = 0

    def to_text(self) -> str:
        return (
            f"examined {self.examined}\n"
            f"deleted {self.deleted}\n"
            f"retained_by_grace {self.retained_by_grace}\n"
            f"errors {self.errors}\n"
            f"temp_removed {self.temp_removed}\n"
        )


def gc_roots(store: Store) -> list[ObjectId]:
    roots = []
    for name in list_graphs(store):
        # CorruptHead propagates: never sweep with an unreadable root set.
        roots.extend(r.commit for r in read_head(store, name).records)
    roots.extend(pending_markers(store))
    roots.extend(failed_markers(store))
    return roots


def reachable_set(store: Store) -> set[ObjectId]:
    return walk(store, gc_roots(store), parents=False).objects


def collect(store: Store, grace: float | None = None, dry_run: bool = False) -> GcReport:
    if grace is None:
        grace = store.config.gc_grace
    report = GcReport()
    lock = store.root / "gc.lock"
    locking.acquire(lock, store.holder, store.config.lock_timeout)
    try:
        live = reachable_set(store)
        now = time.time()
        for oid, path in store.iter_object_paths():
            report.examined += 1
            if oid in live:
                continue
            try:
                age = now - path.stat().st_mtime
            except FileNotFoundError:
                continue
            if grace > 0 and age <= grace:
                report.retained_by_grace += 1
                continue
            if not dry_run:
                try:
                    path.unlink()
                except FileNotFoundError:
                    continue
                except OSError as e:
                    logger.warning("gc: cannot delete %s: %s", path, e)
                    report.errors += 1
                    continue
            report.deleted += 1
        tmp_dir = store.objects_dir / "tmp"
        for entry in os.scandir(tmp_dir) if tmp_dir.is_dir() else ():
            try:
                age = now - entry.stat().st_mtime
                if grace > 0 and age <= grace:
                    continue
                if not dry_run:
                    os.unlink(entry.path)
                report.temp_removed += 1
            except FileNotFoundError:
                continue
            except OSError as e:
                logger.warning("gc: cannot delete %s: %s", entry.path, e)
                report.errors += 1
    finally:
        locking.release(lock, store.holder)
    logger.info("gc: %s", report)
    return report
