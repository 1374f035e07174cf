"""Prune old history, collect garbage, and catch a flipped bit."""

import tempfile
from pathlib import Path

from graphstore import collect, commit_one, create_graph, find_last_intact, fsck, init_store, lock_graphs, prune
from graphstore.objects import load
from graphstore.trees import tree_from_dict

with tempfile.TemporaryDirectory() as tmp:
    store = init_store(Path(tmp) / "store")
    create_graph(store, "log")
    for day in range(6):
        commit_one(store, "log", tree_from_dict(store, {"entries": f"day {day}".encode() * 50}), f"day {day}")
    store.put_object("blob", b"written but never committed")

    print("dry run:", collect(store, grace=0, dry_run=True).to_text().strip().replace("\n", ", "))
    with lock_graphs(store, "log"):
        kept = prune(store, "log", 2)
    print("kept seqs", [r.seq for r in kept])
    report = collect(store, grace=0)
    print("collected:", report.to_text().strip().replace("\n", ", "))

    latest = find_last_intact(store, "log")
    blob = load(store, load(store, latest.commit).tree).get("entries").id
    path = store.object_path(blob)
    data = bytearray(path.read_bytes())
    data[20] ^= 0x04
    path.write_bytes(bytes(data))

    print("\nfsck without re-hashing sees nothing:", fsck(store).clean)
    report = fsck(store, verify_hashes=True)
    print(report.to_text())
    print("newest intact version:", find_last_intact(store, "log", verify_hashes=True))
