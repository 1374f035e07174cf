"""A named graph keeps every version; rewinding appends instead of erasing."""

import tempfile
from pathlib import Path

from graphstore import StaleHead, Update, commit, commit_one, create_graph, init_store, lock_graphs, read_history, rewind
from graphstore.objects import load
from graphstore.trees import tree_from_dict
from graphstore.txn import snapshot

with tempfile.TemporaryDirectory() as tmp:
    store = init_store(Path(tmp) / "store")
    create_graph(store, "config")

    for version in ("v1", "v2", "v3"):
        commit_one(store, "config", tree_from_dict(store, {"setting": version.encode()}), f"set {version}")

    def show():
        for rec in read_history(store, "config"):
            c = load(store, rec.commit)
            print(f"  seq {rec.seq}  {rec.commit.hex[:12]}  {c.message}")

    print("history:")
    show()

    with lock_graphs(store, "config"):
        rewind(store, "config", 1)
    print("\nafter rewinding to seq 1 (a new record pointing at the old commit):")
    show()

    # Optimistic concurrency: a writer holding an old snapshot loses.
    stale = snapshot(store, "config")
    commit_one(store, "config", tree_from_dict(store, {"setting": b"v5"}), "someone else")
    try:
        commit(store, [Update("config", stale, tree_from_dict(store, {"setting": b"mine"}), "late")])
    except StaleHead as e:
        print("\nlate writer rejected:", e)
