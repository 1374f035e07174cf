"""Filesystem-backed content-addressable object storage.

Objects live at ``objects/<hex[0:2]>/<hex[2:64]>`` as their raw canonical
bytes (``<kind> <length>\\n<content>``). A fanout file is either absent or
complete: writers stage into ``objects/tmp/`` and hard-link into place, which
fails atomically if another writer got there first.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import os
import re
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

from .errors import CorruptObject, InitConflict, IoError, NotFound

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
HASH_NAME = "sha256"
STORE_DIRS = ("objects", "graphs", "txns", "indexes")

_HEX64 = re.compile(r"[0-9a-f]{64}\Z")
_HEX62 = re.compile(r"[0-9a-f]{62}\Z")
_HEX2 = re.compile(r"[0-9a-f]{2}\Z")


class Kind(str, enum.Enum):
    BLOB = "blob"
    TREE = "tree"
    COMMIT = "commit"
    TXN = "txn"

    @property
    def code(self) -> int:
        """One-byte tag used on the sync wire."""
        return _KIND_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> Kind:
        for kind, c in _KIND_CODES.items():
            if c == code:
                return kind
        raise ValueError(f"unknown kind code {code}")


_KIND_CODES = {Kind.BLOB: 1, Kind.TREE: 2, Kind.COMMIT: 3, Kind.TXN: 4}


class Durability(str, enum.Enum):
    FULL = "full"
    HEAD = "head"
    NONE = "none"


class VerifyResult(str, enum.Enum):
    OK = "ok"
    HASH_MISMATCH = "hash_mismatch"
    UNREADABLE = "unreadable"


@dataclass(frozen=True, order=True)
class ObjectId:
    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, bytes) or len(self.raw) != 32:
            raise ValueError("ObjectId needs exactly 32 bytes")

    @property
    def hex(self) -> str:
        return self.raw.hex()

    @classmethod
    def from_hex(cls, text: str) -> ObjectId:
        if not _HEX64.match(text):
            raise ValueError(f"not a 64-char lowercase hex id: {text!r}")
        return cls(bytes.fromhex(text))

    def __str__(self) -> str:
        return self.hex

    def __repr__(self) -> str:
        return f"ObjectId({self.hex[:12]}…)"


@dataclass(frozen=True)
class StoredObject:
    kind: Kind
    content: bytes

    @property
    def id(self) -> ObjectId:
        return compute_id(self.kind, self.content)


@dataclass
class StoreConfig:
    durability: Durability = Durability.FULL
    lock_timeout: float = 60.0
    gc_grace: float = 3600.0

    def __post_init__(self):
        self.durability = Durability(self.durability)
        if not self.lock_timeout > 0:
            raise ValueError("lock_timeout must be > 0")
        if self.gc_grace < 0:
            raise ValueError("gc_grace must be >= 0")

    def to_text(self) -> str:
        lines = [
            f"format_version={FORMAT_VERSION}",
            f"hash={HASH_NAME}",
            f"durability={self.durability.value}",
            f"lock_timeout_secs={_num(self.lock_timeout)}",
            f"gc_grace_secs={_num(self.gc_grace)}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> StoreConfig:
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise IoError(f"malformed config line: {line!r}")
            values[key.strip()] = value.strip()
        if values.get("format_version") != str(FORMAT_VERSION):
            raise IoError(f"unsupported format_version {values.get('format_version')!r}")
        if values.get("hash") != HASH_NAME:
            raise IoError(f"unsupported hash {values.get('hash')!r}")
        return cls(
            durability=Durability(values.get("durability", "full")),
            lock_timeout=float(values.get("lock_timeout_secs", 60)),
            gc_grace=float(values.get("gc_grace_secs", 3600)),
        )


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def canonical_bytes(kind: Kind | str, content: bytes) -> bytes:
    kind = Kind(kind)
    return b"%s %d\n" % (kind.value.encode("ascii"), len(content)) + content


def compute_id(kind: Kind | str, content: bytes) -> ObjectId:
    return ObjectId(hashlib.sha256(canonical_bytes(kind, content)).digest())


def parse_canonical(data: bytes) -> tuple[Kind, bytes]:
    """Split canonical object bytes into (kind, content).

    Raises CorruptObject unless the header is exactly ``<kind> <len>\\n`` with a
    canonical decimal length matching the remaining byte count.
    """
    nl = data.find(b"\n", 0, 32)
    if nl < 0:
        raise CorruptObject("missing header newline")
    kind_name, sep, length = data[:nl].partition(b" ")
    if not sep:
        raise CorruptObject("malformed header")
    try:
        kind = Kind(kind_name.decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise CorruptObject(f"unknown kind {kind_name!r}") from None
    if not length.isdigit() or (len(length) > 1 and length.startswith(b"0")):
        raise CorruptObject(f"non-canonical length {length!r}")
    content = data[nl + 1 :]
    if int(length) != len(content):
        raise CorruptObject(f"header says {int(length)} bytes, found {len(content)}")
    return kind, content


def fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


class Store:
    """Handle bound to one store root.

    A handle is meant for one logical thread at a time; open as many as
    needed. All cross-process coordination happens through the filesystem.
    """

    def __init__(self, root: Path | str, config: StoreConfig, verify_on_read: bool = False):
        self.root = Path(root)
        self.config = config
        self.verify_on_read = verify_on_read
        self.holder = uuid.uuid4().hex
        self.held_locks: set[str] = set()
        self.indexers: dict = {}
        # Fault-injection hook: called with a step name at protocol boundaries.
        self.step_hook: Callable[[str], None] | None = None

    def __repr__(self) -> str:
        return f"Store({str(self.root)!r})"

    def clone(self) -> Store:
        """A fresh handle on the same store, e.g. for another thread."""
        other = Store(self.root, self.config, self.verify_on_read)
        other.indexers = dict(self.indexers)
        return other

    @property
    def objects_dir(self) -> Path:
        return self.root / "objects"

    @property
    def graphs_dir(self) -> Path:
        return self.root / "graphs"

    @property
    def pending_dir(self) -> Path:
        return self.root / "txns" / "pending"

    @property
    def failed_dir(self) -> Path:
        return self.root / "txns" / "failed"

    @property
    def indexes_dir(self) -> Path:
        return self.root / "indexes"

    @property
    def durability(self) -> Durability:
        return self.config.durability

    def step(self, site: str) -> None:
        if self.step_hook is not None:
            self.step_hook(site)

    def object_path(self, oid: ObjectId) -> Path:
        h = oid.hex
        return self.objects_dir / h[:2] / h[2:]

    def locate_object(self, oid: ObjectId) -> tuple[bool, Path]:
        path = self.object_path(oid)
        return path.is_file(), path

    def has_object(self, oid: ObjectId) -> bool:
        return self.object_path(oid).is_file()

    def put_object(self, kind: Kind | str, content: bytes) -> tuple[ObjectId, bool]:
        kind = Kind(kind)
        data = canonical_bytes(kind, content)
        oid = ObjectId(hashlib.sha256(data).digest())
        path = self.object_path(oid)
        if path.exists():
            # Freshen so a concurrent GC's grace window covers the reuse.
            try:
                os.utime(path)
                return oid, False
            except FileNotFoundError:
                pass  # collected between the check and the touch: write it again
            except OSError:
                return oid, False
        full = self.durability is Durability.FULL
        tmp = self.objects_dir / "tmp" / uuid.uuid4().hex
        try:
            path.parent.mkdir(exist_ok=True)
            with open(tmp, "xb") as f:
                f.write(data)
                if full:
                    f.flush()
                    os.fsync(f.fileno())
            self.step("put.tmp_written")
            try:
                created = _exclusive_move(tmp, path)
            finally:
                if tmp.exists():
                    tmp.unlink()
            if created and full:
                fsync_dir(path.parent)
        except OSError as e:
            raise IoError(f"writing {oid.hex}: {e}") from e
        return oid, created

    def read_raw(self, oid: ObjectId) -> bytes:
        try:
            return self.object_path(oid).read_bytes()
        except FileNotFoundError:
            raise NotFound(f"object {oid.hex}") from None
        except OSError as e:
            raise IoError(f"reading {oid.hex}: {e}") from e

    def get_object(self, oid: ObjectId, verify: bool | None = None) -> StoredObject:
        data = self.read_raw(oid)
        if self.verify_on_read if verify is None else verify:
            if hashlib.sha256(data).digest() != oid.raw:
                raise CorruptObject(f"{oid.hex}: hash mismatch")
        try:
            kind, content = parse_canonical(data)
        except CorruptObject as e:
            raise CorruptObject(f"{oid.hex}: {e}") from None
        return StoredObject(kind, content)

    def verify_object(self, oid: ObjectId) -> VerifyResult:
        try:
            data = self.object_path(oid).read_bytes()
        except OSError:
            return VerifyResult.UNREADABLE
        if hashlib.sha256(data).digest() != oid.raw:
            return VerifyResult.HASH_MISMATCH
        return VerifyResult.OK

    def iter_object_paths(self) -> Iterator[tuple[ObjectId, Path]]:
        """Every well-named object file in the fanout directories."""
        try:
            fanouts = sorted(os.scandir(self.objects_dir), key=lambda e: e.name)
        except FileNotFoundError:
            return
        for d in fanouts:
            if not _HEX2.match(d.name) or not d.is_dir():
                continue
            for f in sorted(os.scandir(d.path), key=lambda e: e.name):
                if _HEX62.match(f.name):
                    yield ObjectId.from_hex(d.name + f.name), Path(f.path)


def _exclusive_move(src: Path, dst: Path) -> bool:
    try:
        os.link(src, dst)
        return True
    except FileExistsError:
        return False
    except OSError as e:
        if e.errno not in (1, 95, 38):  # EPERM, EOPNOTSUPP, ENOSYS: no hard links
            raise
    if dst.exists():
        return False
    # Without hard links a racing writer may replace dst, but with identical bytes.
    os.replace(src, dst)
    return True


def init_store(root: Path | str, config: StoreConfig | None = None) -> Store:
    root = Path(root)
    config = config or StoreConfig()
    try:
        if root.exists():
            if not root.is_dir():
                raise InitConflict(f"{root} exists and is not a directory")
            if (root / "config").exists():
                raise InitConflict(f"{root} is already a store")
            if any(root.iterdir()):
                raise InitConflict(f"{root} is not empty")
        root.mkdir(parents=True, exist_ok=True)
        for sub in ("objects/tmp", "graphs", "txns/pending", "txns/failed", "indexes"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        tmp = root / f".config.{uuid.uuid4().hex}"
        tmp.write_text(config.to_text(), encoding="utf-8")
        os.replace(tmp, root / "config")
        if config.durability is Durability.FULL:
            fsync_dir(root)
    except PermissionError as e:
        raise IoError(str(e)) from e
    logger.debug("initialised store at %s", root)
    return Store(root, config)


def open_store(
    root: Path | str,
    *,
    recover: bool = True,
    verify_on_read: bool = False,
    durability: Durability | str | None = None,
) -> Store:
    """Open an existing store, rolling forward any pending transactions.

    ``durability`` overrides the persisted policy for this handle only.
    """
    root = Path(root)
    try:
        text = (root / "config").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise NotFound(f"no store at {root}") from None
    except OSError as e:
        raise IoError(str(e)) from e
    config = StoreConfig.from_text(text)
    if durability is not None:
        config.durability = Durability(durability)
    store = Store(root, config, verify_on_read=verify_on_read)
    if recover:
        from .txn import recover_pending

        recover_pending(store)
    return store
