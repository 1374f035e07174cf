"""In-process sync server and a client connection that dies on cue."""

from __future__ import annotations

import contextlib
import threading
import time

from graphstore import SessionError, make_server
from graphstore.sync import Connection, connect


@contextlib.contextmanager
def running_server(store):
    server = make_server(store, "127.0.0.1:0")
    host, port = server.server_address
    th = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    th.start()
    try:
        yield server, f"{host}:{port}"
    finally:
        server.shutdown()
        server.server_close()
        th.join()


def wait_sessions(server, n, timeout=10.0):
    """Block until ``n`` server sessions have finished."""
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        with server.stats_lock:
            if len(server.sessions) >= n:
                return list(server.sessions)
        time.sleep(0.01)
    raise TimeoutError(f"only {len(server.sessions)} of {n} sessions finished")


class DroppingConnection(Connection):
    """Writes frames normally until frame ``kill_at`` (0-based), of which only
    ``keep`` bytes go out before the socket is closed."""

    def __init__(self, inner: Connection, kill_at: int, keep: int):
        super().__init__(inner.rfile, inner.wfile, inner._closer)
        self.kill_at = kill_at
        self.keep = keep
        self.frames = 0

    def write_raw(self, data: bytes) -> None:
        if self.frames == self.kill_at:
            super().write_raw(data[: min(self.keep, len(data) - 1)])
            self.close()
            raise SessionError("simulated disconnect")
        self.frames += 1
        super().write_raw(data)


class CountingConnection(Connection):
    def __init__(self, inner: Connection):
        super().__init__(inner.rfile, inner.wfile, inner._closer)
        self.frames = 0

    def write_raw(self, data: bytes) -> None:
        self.frames += 1
        super().write_raw(data)


def dial(address, wrapper=None, **kw):
    conn = connect(address)
    return wrapper(conn, **kw) if wrapper else conn
