"""Resumable push/pull of graph histories between stores.

Wire format: every frame is ``u32 length (big-endian) | u8 type | payload``
where length counts the payload only. Strings are ``u8 length | bytes``;
ids are 32 raw bytes, all-zero meaning "none".

    HELLO       0x01  u16 proto
    REF_REQ     0x02  graph
    REF_ADVERT  0x03  graph, u64 seq, id
    WANT_CHECK  0x04  u16 count, count * id          (count <= 256)
    MISSING     0x05  bitmap, bit i = byte[i // 8] >> (i % 8) & 1
    OBJECT      0x06  u8 kind, content
    HEAD_UPDATE 0x07  graph, id expected, u16 count, count * (u64 seq, id)
    OK          0x08  (empty)
    ERROR       0x7F  u16 code, UTF-8 message

Push: the client asks for the remote head (REF_REQ), finds it in its own
history, negotiates which closure objects the remote lacks, streams them
dependencies first, then sends HEAD_UPDATE. Pull is the same exchange with
roles swapped: the client opens with its own REF_ADVERT and the server plays
sender, finishing with OK.

Because objects arrive leaves-first and each is stored on receipt, an
interrupted transfer leaves only closure-complete objects behind; the next
negotiation skips them.
"""

from __future__ import annotations

import enum
import logging
import os
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from typing import BinaryIO, Iterable

from .errors import (
    CorruptObject,
    GraphStoreError,
    InvalidName,
    IoError,
    LockTimeout,
    NotFastForward,
    NotFound,
    ObjectRejected,
    SessionError,
    StaleRemote,
)
from .headlog import (
    HeadRecord,
    append_record,
    check_graph_name,
    create_graph,
    graph_exists,
    latest_record,
    lock_graphs,
    read_head,
)
from .indexers import notify_commit
from .objects import references
from .store import Kind, ObjectId, Store, compute_id, parse_canonical

logger = logging.getLogger(__name__)

PROTO_VERSION = 1
MAX_PAYLOAD = 16 * 1024 * 1024
BATCH_SIZE = 256
MAX_RECORDS_PER_UPDATE = 0xFFFF
ZERO_ID = bytes(32)


class Msg(enum.IntEnum):
    HELLO = 0x01
    REF_REQ = 0x02
    REF_ADVERT = 0x03
    WANT_CHECK = 0x04
    MISSING = 0x05
    OBJECT = 0x06
    HEAD_UPDATE = 0x07
    OK = 0x08
    ERROR = 0x7F


class ErrorCode(enum.IntEnum):
    PROTOCOL = 1
    VERSION = 2
    NOT_FOUND = 3
    STALE_REMOTE = 4
    NOT_FAST_FORWARD = 5
    OBJECT_REJECTED = 6
    DANGLING = 7
    LOCK_TIMEOUT = 8
    INTERNAL = 9


_ERROR_TYPES = {
    ErrorCode.NOT_FOUND: NotFound,
    ErrorCode.STALE_REMOTE: StaleRemote,
    ErrorCode.NOT_FAST_FORWARD: NotFastForward,
    ErrorCode.OBJECT_REJECTED: ObjectRejected,
    ErrorCode.LOCK_TIMEOUT: LockTimeout,
}


class RemoteError(SessionError):
    def __init__(self, code: int, message: str):
        super().__init__(f"remote error {code}: {message}")
        self.code = code


@dataclass
class PushReport:
    objects_sent: int = 0
    records_appended: int = 0


# -- payload codecs -------------------------------------------------------


def encode_frame(mtype: int, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise SessionError(f"payload of {len(payload)} bytes exceeds frame limit")
    return struct.pack(">IB", len(payload), mtype) + payload


def _pack_name(name: str) -> bytes:
    raw = name.encode("ascii")
    return bytes([len(raw)]) + raw


def _unpack_name(buf: bytes, pos: int) -> tuple[str, int]:
    if pos >= len(buf):
        raise SessionError("truncated graph name")
    n = buf[pos]
    raw = buf[pos + 1 : pos + 1 + n]
    if len(raw) != n:
        raise SessionError("truncated graph name")
    try:
        name = raw.decode("ascii")
        check_graph_name(name)
    except (UnicodeDecodeError, InvalidName):
        raise SessionError(f"bad graph name {raw!r}") from None
    return name, pos + 1 + n


def _opt_id(raw: bytes) -> ObjectId | None:
    return None if raw == ZERO_ID else ObjectId(raw)


def _raw(oid: ObjectId | None) -> bytes:
    return ZERO_ID if oid is None else oid.raw


def pack_hello(version: int = PROTO_VERSION) -> bytes:
    return struct.pack(">H", version)


def pack_ref_advert(graph: str, seq: int, commit: ObjectId | None) -> bytes:
    return _pack_name(graph) + struct.pack(">Q", seq) + _raw(commit)


def unpack_ref_advert(p: bytes) -> tuple[str, int, ObjectId | None]:
    graph, pos = _unpack_name(p, 0)
    if len(p) != pos + 40:
        raise SessionError("bad REF_ADVERT length")
    (seq,) = struct.unpack_from(">Q", p, pos)
    return graph, seq, _opt_id(p[pos + 8 : pos + 40])


def pack_want_check(ids: list[ObjectId]) -> bytes:
    if len(ids) > BATCH_SIZE:
        raise SessionError("negotiation batch too large")
    return struct.pack(">H", len(ids)) + b"".join(i.raw for i in ids)


def unpack_want_check(p: bytes) -> list[ObjectId]:
    if len(p) < 2:
        raise SessionError("bad WANT_CHECK")
    (n,) = struct.unpack_from(">H", p)
    if n > BATCH_SIZE:
        raise SessionError(f"WANT_CHECK batch of {n} exceeds {BATCH_SIZE}")
    if len(p) != 2 + 32 * n:
        raise SessionError("bad WANT_CHECK length")
    return [ObjectId(p[2 + 32 * i : 34 + 32 * i]) for i in range(n)]


def pack_missing(flags: list[bool]) -> bytes:
    out = bytearray((len(flags) + 7) // 8)
    for i, f in enumerate(flags):
        if f:
            out[i >> 3] |= 1 << (i & 7)
    return bytes(out)


def unpack_missing(p: bytes, count: int) -> list[bool]:
    if len(p) != (count + 7) // 8:
        raise SessionError("MISSING bitmap does not match offered batch")
    return [bool(p[i >> 3] >> (i & 7) & 1) for i in range(count)]


def pack_head_update(graph: str, expected: ObjectId | None, records: list[HeadRecord]) -> bytes:
    parts = [_pack_name(graph), _raw(expected), struct.pack(">H", len(records))]
    parts += [struct.pack(">Q", r.seq) + r.commit.raw for r in records]
    return b"".join(parts)


def unpack_head_update(p: bytes) -> tuple[str, ObjectId | None, list[HeadRecord]]:
    graph, pos = _unpack_name(p, 0)
    if len(p) < pos + 34:
        raise SessionError("bad HEAD_UPDATE")
    expected = _opt_id(p[pos : pos + 32])
    (n,) = struct.unpack_from(">H", p, pos + 32)
    pos += 34
    if len(p) != pos + 40 * n:
        raise SessionError("bad HEAD_UPDATE length")
    recs = []
    for i in range(n):
        (seq,) = struct.unpack_from(">Q", p, pos + 40 * i)
        recs.append(HeadRecord(seq, ObjectId(p[pos + 40 * i + 8 : pos + 40 * i + 40])))
    return graph, expected, recs


def pack_error(code: int, message: str) -> bytes:
    return struct.pack(">H", code) + message.encode("utf-8")[:4096]


def unpack_error(p: bytes) -> tuple[int, str]:
    if len(p) < 2:
        return ErrorCode.PROTOCOL, "malformed ERROR frame"
    return struct.unpack_from(">H", p)[0], p[2:].decode("utf-8", "replace")


# -- connection ------------------------------------------------------------


class Connection:
    """Frame reader/writer over any reliable byte stream."""

    def __init__(self, rfile: BinaryIO, wfile: BinaryIO, closer=None):
        self.rfile = rfile
        self.wfile = wfile
        self._closer = closer

    @classmethod
    def from_socket(cls, sock: socket.socket) -> Connection:
        return cls(sock.makefile("rb"), sock.makefile("wb"), closer=sock)

    def send(self, mtype: int, payload: bytes = b"") -> None:
        self.write_raw(encode_frame(mtype, payload))

    def write_raw(self, data: bytes) -> None:
        try:
            self.wfile.write(data)
            self.wfile.flush()
        except (OSError, ValueError) as e:
            raise SessionError(f"connection lost while sending: {e}") from e

    def _read_exact(self, n: int) -> bytes:
        try:
            data = self.rfile.read(n)
        except (OSError, ValueError) as e:
            raise SessionError(f"connection lost while receiving: {e}") from e
        return data or b""

    def recv(self) -> tuple[int, bytes] | None:
        """Next frame, or None on a clean end of stream between frames."""
        header = self._read_exact(5)
        if not header:
            return None
        if len(header) != 5:
            raise SessionError("truncated frame header")
        length, mtype = struct.unpack(">IB", header)
        if length > MAX_PAYLOAD:
            raise SessionError(f"frame of {length} bytes exceeds limit")
        try:
            mtype = Msg(mtype)
        except ValueError:
            raise SessionError(f"unknown frame type 0x{mtype:02x}") from None
        payload = self._read_exact(length) if length else b""
        if len(payload) != length:
            raise SessionError("truncated frame payload")
        return mtype, payload

    def expect(self, *types: Msg) -> tuple[int, bytes]:
        frame = self.recv()
        if frame is None:
            raise SessionError("connection closed by peer")
        mtype, payload = frame
        if mtype == Msg.ERROR and Msg.ERROR not in types:
            raise_remote(payload)
        if mtype not in types:
            raise SessionError(f"expected {'/'.join(t.name for t in types)}, got {Msg(mtype).name}")
        return mtype, payload

    def error(self, code: ErrorCode, message: str) -> None:
        try:
            self.send(Msg.ERROR, pack_error(code, message))
        except SessionError:
            pass

    def close(self) -> None:
        for f in (self.wfile, self.rfile):
            try:
                f.close()
            except (OSError, ValueError):
                pass
        if self._closer is not None:
            try:
                self._closer.close()
            except OSError:
                pass


def raise_remote(payload: bytes):
    code, message = unpack_error(payload)
    exc = _ERROR_TYPES.get(code)
    if exc is not None:
        raise exc(f"remote: {message}")
    raise RemoteError(code, message)


def parse_endpoint(endpoint: str) -> tuple[int, object]:
    if endpoint.startswith("unix:"):
        return socket.AF_UNIX, endpoint[5:]
    if "/" in endpoint:
        return socket.AF_UNIX, endpoint
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be host:port or a socket path: {endpoint!r}")
    return socket.AF_INET, (host or "127.0.0.1", int(port))


def connect(endpoint: str, timeout: float | None = 30.0) -> Connection:
    family, addr = parse_endpoint(endpoint)
    sock = socket.socket(family, socket.SOCK_STREAM)
    sock.settimeout(timeout)
    try:
        sock.connect(addr)
    except OSError as e:
        sock.close()
        raise IoError(f"cannot connect to {endpoint}: {e}") from e
    return Connection.from_socket(sock)


# -- negotiation and sending -------------------------------------------------


def negotiate_missing(conn: Connection, ids: Iterable[ObjectId]) -> list[ObjectId]:
    """Ask the peer which of ``ids`` it lacks, in batches of BATCH_SIZE."""
    ids = list(ids)
    missing = []
    for i in range(0, len(ids), BATCH_SIZE):
        batch = ids[i : i + BATCH_SIZE]
        conn.send(Msg.WANT_CHECK, pack_want_check(batch))
        _, reply = conn.expect(Msg.MISSING)
        missing += [oid for oid, m in zip(batch, unpack_missing(reply, len(batch))) if m]
    return missing


def _missing_closure(conn: Connection, store: Store, roots: list[ObjectId]) -> list[ObjectId]:
    """Objects under ``roots`` the peer lacks, ordered dependencies first.

    The walk does not descend below objects the peer already has: a stored
    object implies a stored closure on a receiver that only accepts objects
    leaves-first.
    """
    seen = set(roots)
    frontier = list(dict.fromkeys(roots))
    refs: dict[ObjectId, list[ObjectId]] = {}
    while frontier:
        nxt = []
        for oid in negotiate_missing(conn, frontier):
            obj = store.get_object(oid)
            refs[oid] = references(obj.kind, obj.content, parents=False)
            for r in refs[oid]:
                if r not in seen:
                    seen.add(r)
                    nxt.append(r)
        frontier = nxt
    order = []
    done: set[ObjectId] = set()
    for root in roots:
        stack = [(root, False)]
        while stack:
            oid, expanded = stack.pop()
            if oid in done or oid not in refs:
                continue
            if expanded:
                done.add(oid)
                order.append(oid)
                continue
            stack.append((oid, True))
            stack.extend((r, False) for r in refs[oid] if r not in done)
    return order


def _send_history(
    conn: Connection, store: Store, graph: str, remote_commit: ObjectId | None, force: bool
) -> tuple[PushReport, bool]:
    """Sender half of a transfer. Returns (report, whether HEAD_UPDATE was sent)."""
    records = read_head(store, graph).records
    if remote_commit is None:
        todo = records
    else:
        at = next((i for i in range(len(records) - 1, -1, -1) if records[i].commit == remote_commit), None)
        if at is None:
            if not force:
                raise NotFastForward(f"remote head {remote_commit.hex} is not in local history of {graph!r}")
            todo = records
        else:
            todo = records[at + 1 :]
    report = PushReport()
    if not todo:
        return report, False
    roots = list(dict.fromkeys(r.commit for r in reversed(todo)))
    for oid in _missing_closure(conn, store, roots):
        kind, content = parse_canonical(store.read_raw(oid))
        conn.send(Msg.OBJECT, bytes([kind.code]) + content)
        report.objects_sent += 1
    expected = remote_commit
    for i in range(0, len(todo), MAX_RECORDS_PER_UPDATE):
        chunk = todo[i : i + MAX_RECORDS_PER_UPDATE]
        conn.send(Msg.HEAD_UPDATE, pack_head_update(graph, expected, chunk))
        conn.expect(Msg.OK)
        report.records_appended += len(chunk)
        expected = chunk[-1].commit
    return report, True


# -- receiving ---------------------------------------------------------------


class _Rejected(Exception):
    def __init__(self, code: ErrorCode, message: str, fatal: bool):
        super().__init__(message)
        self.code = code
        self.fatal = fatal


class _Receiver:
    def __init__(self, store: Store):
        self.store = store
        self.wanted: set[ObjectId] = set()
        self.received: set[ObjectId] = set()
        self.accepted = 0
        self.appended = 0

    def want_check(self, payload: bytes) -> bytes:
        ids = unpack_want_check(payload)
        flags = [not self.store.has_object(i) for i in ids]
        self.wanted.update(i for i, f in zip(ids, flags) if f)
        return pack_missing(flags)

    def object(self, payload: bytes) -> None:
        if not payload:
            raise SessionError("empty OBJECT frame")
        try:
            kind = Kind.from_code(payload[0])
        except ValueError:
            raise _Rejected(ErrorCode.OBJECT_REJECTED, f"unknown kind code {payload[0]}", True) from None
        oid, created = _verify_then_put(self.store, kind, payload[1:], self.wanted)
        self.wanted.discard(oid)
        self.received.add(oid)
        if created:
            self.accepted += 1

    def head_update(self, payload: bytes) -> list[HeadRecord]:
        graph, expected, records = unpack_head_update(payload)
        lacking = self._unverified_closure([r.commit for r in records])
        if lacking:
            raise _Rejected(ErrorCode.DANGLING, f"{len(lacking)} objects missing, e.g. {lacking[0].hex}", False)
        store = self.store
        if not graph_exists(store, graph):
            if expected is not None:
                raise _Rejected(ErrorCode.STALE_REMOTE, f"graph {graph} does not exist here", False)
            try:
                create_graph(store, graph)
            except GraphStoreError:
                pass  # created concurrently
        appended = []
        with lock_graphs(store, graph):
            latest = latest_record(store, graph)
            current = latest.commit if latest else None
            if current != expected:
                raise _Rejected(ErrorCode.STALE_REMOTE, f"graph {graph} moved on", False)
            seq = latest.seq if latest else read_head(store, graph).latest_seq
            for r in records:
                appended.append(append_record(store, graph, seq, r.commit))
                seq += 1
        prev = expected
        for rec in appended:
            notify_commit(store, graph, rec, old=prev)
            prev = rec.commit
        self.appended += len(appended)
        return appended

    def _unverified_closure(self, roots: list[ObjectId]) -> list[ObjectId]:
        """Ids missing under ``roots``, expanding only objects received this session."""
        lacking = []
        seen: set[ObjectId] = set()
        stack = list(roots)
        while stack:
            oid = stack.pop()
            if oid in seen:
                continue
            seen.add(oid)
            if not self.store.has_object(oid):
                lacking.append(oid)
            elif oid in self.received:
                obj = self.store.get_object(oid)
                stack.extend(references(obj.kind, obj.content, parents=False))
        return lacking


def _verify_then_put(store: Store, kind: Kind, content: bytes, wanted: set[ObjectId]) -> tuple[ObjectId, bool]:
    oid = compute_id(kind, content)
    if oid not in wanted:
        raise _Rejected(ErrorCode.OBJECT_REJECTED, f"unsolicited or corrupted object {oid.hex}", True)
    if kind is not Kind.BLOB:
        try:
            references(kind, content)
        except (GraphStoreError, ValueError) as e:
            raise _Rejected(ErrorCode.OBJECT_REJECTED, f"{oid.hex}: {e}", True) from None
    store.step("sync.before_store")
    return store.put_object(kind, content)


def _exc_code(e: Exception) -> ErrorCode:
    if isinstance(e, NotFastForward):
        return ErrorCode.NOT_FAST_FORWARD
    if isinstance(e, NotFound):
        return ErrorCode.NOT_FOUND
    if isinstance(e, LockTimeout):
        return ErrorCode.LOCK_TIMEOUT
    if isinstance(e, (CorruptObject, ObjectRejected)):
        return ErrorCode.OBJECT_REJECTED
    return ErrorCode.INTERNAL


# -- server ------------------------------------------------------------------


@dataclass
class SessionStats:
    objects_accepted: int = 0
    records_appended: int = 0
    error: str | None = None


def serve_connection(store: Store, conn: Connection) -> SessionStats:
    """Run one server session to completion. Never raises for peer faults."""
    stats = SessionStats()
    rx = _Receiver(store)
    try:
        mtype, payload = conn.expect(Msg.HELLO)
        (version,) = struct.unpack(">H", payload) if len(payload) == 2 else (-1,)
        if version != PROTO_VERSION:
            conn.error(ErrorCode.VERSION, f"protocol {version} unsupported, need {PROTO_VERSION}")
            stats.error = "version mismatch"
            return stats
        conn.send(Msg.HELLO, pack_hello())
        while True:
            frame = conn.recv()
            if frame is None:
                return stats
            mtype, payload = frame
            try:
                if mtype == Msg.REF_REQ:
                    graph, pos = _unpack_name(payload, 0)
                    if pos != len(payload):
                        raise SessionError("bad REF_REQ")
                    rec = latest_record(store, graph) if graph_exists(store, graph) else None
                    conn.send(Msg.REF_ADVERT, pack_ref_advert(graph, rec.seq if rec else 0, rec.commit if rec else None))
                elif mtype == Msg.WANT_CHECK:
                    conn.send(Msg.MISSING, rx.want_check(payload))
                elif mtype == Msg.OBJECT:
                    rx.object(payload)
                elif mtype == Msg.HEAD_UPDATE:
                    rx.head_update(payload)
                    conn.send(Msg.OK)
                elif mtype == Msg.REF_ADVERT:
                    graph, _, remote_commit = unpack_ref_advert(payload)
                    if not graph_exists(store, graph):
                        raise NotFound(f"graph {graph!r}")
                    _send_history(conn, store, graph, remote_commit, force=False)
                    conn.send(Msg.OK)
                else:
                    raise SessionError(f"unexpected {Msg(mtype).name} frame")
            except _Rejected as e:
                conn.error(e.code, str(e))
                if e.fatal:
                    stats.error = str(e)
                    return stats
            except (NotFastForward, NotFound, LockTimeout) as e:
                conn.error(_exc_code(e), str(e))
    except SessionError as e:
        stats.error = str(e)
        conn.error(ErrorCode.PROTOCOL, str(e))
        logger.info("session dropped: %s", e)
    except GraphStoreError as e:
        stats.error = str(e)
        conn.error(_exc_code(e), str(e))
        logger.warning("session failed: %s", e)
    finally:
        stats.objects_accepted = rx.accepted
        stats.records_appended = rx.appended
        conn.close()
    return stats


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server = self.server
        store = server.store.clone()
        conn = Connection(self.rfile, self.wfile)
        stats = serve_connection(store, conn)
        with server.stats_lock:
            server.sessions.append(stats)


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class _UnixServer(socketserver.ThreadingUnixStreamServer):
    daemon_threads = True


def make_server(store: Store, endpoint: str) -> socketserver.BaseServer:
    """Bind ``endpoint`` (``host:port`` or a socket path); call serve_forever()."""
    family, addr = parse_endpoint(endpoint)
    try:
        if family == socket.AF_UNIX:
            if os.path.exists(addr):
                os.unlink(addr)
            server = _UnixServer(addr, _Handler)
        else:
            server = _TCPServer(addr, _Handler)
    except OSError as e:
        raise IoError(f"cannot bind {endpoint}: {e}") from e
    server.store = store
    server.sessions = []
    server.stats_lock = threading.Lock()
    return server


def serve(store: Store, endpoint: str) -> None:
    server = make_server(store, endpoint)
    logger.info("serving %s on %s", store.root, endpoint)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


# -- client ------------------------------------------------------------------


def _hello(conn: Connection) -> None:
    conn.send(Msg.HELLO, pack_hello())
    _, payload = conn.expect(Msg.HELLO)
    if payload != pack_hello():
        raise SessionError("peer speaks a different protocol version")


def _open(peer: str | Connection) -> tuple[Connection, bool]:
    if isinstance(peer, Connection):
        return peer, False
    return connect(peer), True


def push(store: Store, peer: str | Connection, graph: str, force: bool = False) -> PushReport:
    if not graph_exists(store, graph):
        raise NotFound(f"graph {graph!r}")
    conn, owned = _open(peer)
    try:
        _hello(conn)
        conn.send(Msg.REF_REQ, _pack_name(graph))
        _, payload = conn.expect(Msg.REF_ADVERT)
        name, _, remote_commit = unpack_ref_advert(payload)
        if name != graph:
            raise SessionError(f"asked for {graph!r}, peer advertised {name!r}")
        report, _ = _send_history(conn, store, graph, remote_commit, force)
        return report
    finally:
        if owned:
            conn.close()


def pull(store: Store, peer: str | Connection, graph: str) -> PushReport:
    """Fetch ``graph`` from ``peer`` into ``store``; the report counts objects received."""
    check_graph_name(graph)
    conn, owned = _open(peer)
    rx = _Receiver(store)
    try:
        _hello(conn)
        local = latest_record(store, graph) if graph_exists(store, graph) else None
        conn.send(Msg.REF_ADVERT, pack_ref_advert(graph, local.seq if local else 0, local.commit if local else None))
        while True:
            mtype, payload = conn.expect(Msg.WANT_CHECK, Msg.OBJECT, Msg.HEAD_UPDATE, Msg.OK)
            try:
                if mtype == Msg.WANT_CHECK:
                    conn.send(Msg.MISSING, rx.want_check(payload))
                elif mtype == Msg.OBJECT:
                    rx.object(payload)
                elif mtype == Msg.HEAD_UPDATE:
                    rx.head_update(payload)
                    conn.send(Msg.OK)
                else:
                    break
            except _Rejected as e:
                conn.error(e.code, str(e))
                if e.code == ErrorCode.OBJECT_REJECTED:
                    raise ObjectRejected(str(e)) from None
                if e.code == ErrorCode.STALE_REMOTE:
                    raise StaleRemote(str(e)) from None
                raise SessionError(str(e)) from None
        if not graph_exists(store, graph):
            try:
                create_graph(store, graph)
            except GraphStoreError:
                pass
        return PushReport(rx.accepted, rx.appended)
    finally:
        if owned:
            conn.close()
