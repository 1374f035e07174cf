"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to. The class name
is used verbatim as the first token of the CLI's stderr diagnostic, so
renaming a class is a compatibility break.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2
EXIT_CORRUPT = 3
EXIT_IO = 4


class GraphStoreError(Exception):
    exit_code = EXIT_DOMAIN


class InitConflict(GraphStoreError):
    pass


class IoError(GraphStoreError):
    exit_code = EXIT_IO


class NotFound(GraphStoreError):
    pass


class CorruptObject(GraphStoreError):
    exit_code = EXIT_CORRUPT


class CorruptHead(GraphStoreError):
    exit_code = EXIT_CORRUPT


class EncodeError(GraphStoreError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class ParseError(GraphStoreError):
    exit_code = EXIT_CORRUPT

    def __init__(self, offset: int, reason: str):
        super().__init__(f"at byte {offset}: {reason}")
        self.offset = offset
        self.reason = reason


class InvalidName(GraphStoreError):
    pass


class GraphExists(GraphStoreError):
    pass


class StaleHead(GraphStoreError):
    def __init__(self, graph: str, expected: int, actual: int):
        super().__init__(f"graph {graph!r}: expected seq {expected}, head is at {actual}")
        self.graph = graph
        self.expected = expected
        self.actual = actual


class LockRequired(GraphStoreError):
    pass


class LockTimeout(GraphStoreError):
    pass


class DanglingCommit(GraphStoreError):
    pass


class BadSeq(GraphStoreError):
    pass


class NotRegistered(GraphStoreError):
    pass


class IndexMissing(GraphStoreError):
    pass


class SessionError(GraphStoreError):
    exit_code = EXIT_IO


class StaleRemote(GraphStoreError):
    pass


class NotFastForward(GraphStoreError):
    pass


class ObjectRejected(GraphStoreError):
    exit_code = EXIT_CORRUPT
