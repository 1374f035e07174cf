"""graphstore: an embedded, content-addressed, versioned graph store.

Typed objects are stored by hash on the filesystem, named graphs keep their
full history in append-only head logs, and stores synchronise by exchanging
only the objects the other side lacks.
"""

from .errors import (
    BadSeq,
    CorruptHead,
    CorruptObject,
    DanglingCommit,
    EncodeError,
    GraphExists,
    GraphStoreError,
    IndexMissing,
    InitConflict,
    InvalidName,
    IoError,
    LockRequired,
    LockTimeout,
    NotFastForward,
    NotFound,
    NotRegistered,
    ObjectRejected,
    ParseError,
    SessionError,
    StaleHead,
    StaleRemote,
)
from .gc import GcReport, collect, reachable_set
from .headlog import (
    GraphRef,
    HeadRecord,
    append_record,
    create_graph,
    list_graphs,
    lock_graphs,
    prune,
    read_history,
    rewind,
    with_lock,
)
from .indexers import Indexer, IndexStats, PathIndexer, notify_commit, query_path, rebuild_index, register_indexer
from .integrity import FsckReport, find_last_intact, fsck
from .objects import (
    CommitObject,
    TreeEntry,
    TreeObject,
    TxnRecord,
    TxnUpdate,
    closure,
    decode_object,
    encode_object,
    walk,
)
from .store import (
    Durability,
    Kind,
    ObjectId,
    Store,
    StoreConfig,
    StoredObject,
    VerifyResult,
    compute_id,
    init_store,
    open_store,
)
from .sync import PushReport, make_server, negotiate_missing, pull, push, serve
from .txn import Snapshot, Update, commit, commit_one, recover_pending, snapshot

__version__ = "0.1.0"
