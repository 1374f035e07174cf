"""Commit to two graphs atomically, then survive a crash in the middle of it."""

import multiprocessing as mp
import os
import tempfile
from pathlib import Path

from graphstore import StoreConfig, Update, commit, create_graph, fsck, init_store, open_store, read_history
from graphstore.trees import tree_from_dict
from graphstore.txn import snapshot


def crashing_writer(root):
    store = open_store(root)

    def hook(site):
        if site == "txn.appended.0":  # one graph updated, the other not yet
            print(f"  child: dying at {site}", flush=True)
            os._exit(1)

    store.step_hook = hook
    t = tree_from_dict(store, {"balance": b"90"})
    u = tree_from_dict(store, {"balance": b"110"})
    commit(store, [Update("alice", snapshot(store, "alice"), t, "pay"), Update("bob", snapshot(store, "bob"), u, "receive")])


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp) / "store"
        # The dead child leaves its locks behind; recovery breaks them once they
        # are older than the lock timeout, so keep it short here.
        store = init_store(root, StoreConfig(lock_timeout=1.0))
        for name in ("alice", "bob"):
            create_graph(store, name)
            commit(store, [Update(name, snapshot(store, name), tree_from_dict(store, {"balance": b"100"}), "open")])

        p = mp.get_context("fork").Process(target=crashing_writer, args=(root,))
        p.start()
        p.join()

        raw = {g: (root / "graphs" / f"{g}.head").stat().st_size // 82 for g in ("alice", "bob")}
        print("records on disk right after the crash:", raw)

        store = open_store(root)  # opening runs recovery
        print("after recovery:", {g: len(read_history(store, g)) for g in ("alice", "bob")})
        print("fsck clean:", fsck(store, verify_hashes=True).clean)
