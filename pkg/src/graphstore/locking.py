"""Exclusive-create lock files with age-based stale breaking."""

from __future__ import annotations

import logging
import os
import time
import uuid
from pathlib import Path

from .errors import LockTimeout

logger = logging.getLogger(__name__)

_MAX_POLL = 0.02


def acquire(path: Path, holder: str, timeout: float) -> None:
    """Create ``path`` exclusively, retrying for up to ``timeout`` seconds.

    A lock file whose mtime is at least ``timeout`` old is presumed to belong
    to a crashed holder and is broken.
    """
    deadline = time.monotonic() + timeout
    delay = 0.0002
    while True:
        try:
            fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o644)
        except FileExistsError:
            pass
        else:
            try:
                os.write(fd, f"{holder} {int(time.time())}\n".encode())
            finally:
                os.close(fd)
            return
        if break_if_stale(path, timeout):
            continue
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise LockTimeout(f"{path.name} still held after {timeout:g}s")
        time.sleep(min(delay, remaining))
        delay = min(delay * 2, _MAX_POLL)


def release(path: Path, holder: str) -> None:
    try:
        owner = path.read_text().split(" ", 1)[0]
    except FileNotFoundError:
        logger.warning("lock %s vanished while held", path)
        return
    if owner != holder:
        logger.warning("lock %s was broken and re-taken by %s", path, owner)
        return
    try:
        path.unlink()
    except FileNotFoundError:
        pass


def lock_age(path: Path) -> float | None:
    try:
        return time.time() - path.stat().st_mtime
    except FileNotFoundError:
        return None


def break_if_stale(path: Path, timeout: float) -> bool:
    """Remove ``path`` if older than ``timeout``. True if it is now gone."""
    try:
        st = os.stat(path)
    except FileNotFoundError:
        return True
    if time.time() - st.st_mtime < timeout:
        return False
    grave = path.with_name(f"{path.name}.broken-{uuid.uuid4().hex}")
    try:
        os.rename(path, grave)
    except FileNotFoundError:
        return True
    st2 = os.stat(grave)
    if (st2.st_ino, st2.st_mtime_ns) != (st.st_ino, st.st_mtime_ns):
        # Lost a race and grabbed a fresh lock; put it back.
        try:
            os.link(grave, path)
        except FileExistsError:
            pass
    else:
        logger.warning("broke stale lock %s (age %.1fs)", path, time.time() - st.st_mtime)
    os.unlink(grave)
    return True
