import json
import os
import time

from graphstore import Snapshot, commit_one, create_graph, find_last_intact, fsck, lock_graphs, read_history, rewind
from graphstore.objects import load
from oracles import dir_digest, reachable


def _history(store, graph, tree, n):
    recs = []
    for i in range(n):
        recs.append(commit_one(store, graph, tree({"shared": b"s", "n": str(i).encode(), "d": {"i": str(i).encode()}})))
    return recs


def test_fresh_store_empty_report(store, graph, tree):
    _history(store, graph, tree, 3)
    r = fsck(store, verify_hashes=True)
    assert r.empty and r.to_text() == ""


def test_bitflip_reports_exact_id_and_impacted(store, graph, tree):
    recs = _history(store, graph, tree, 4)
    victim = load(store, load(store, recs[2].commit).tree).get("n").id
    path = store.object_path(victim)
    data = bytearray(path.read_bytes())
    data[-1] ^= 0x10
    path.write_bytes(bytes(data))
    r = fsck(store, verify_hashes=True)
    assert r.corrupt_ids() == {victim.hex}
    impacted = {(g, seq) for g, seq, _ in r.impacted}
    oracle = {(graph, rec.seq) for rec in recs if victim.hex in reachable(store.root, [rec.commit.hex], parents=False)}
    assert impacted == oracle == {(graph, 3)}
    assert f"corrupt {victim.hex} hash_mismatch" in r.to_text()
    # without re-hashing, a content flip that still parses goes unnoticed
    assert fsck(store).clean
    assert find_last_intact(store, graph, verify_hashes=True) == Snapshot(graph, 4, recs[3].commit)


def test_deleted_tree_dangles_and_last_intact_steps_back(store, graph, tree):
    recs = _history(store, graph, tree, 3)
    tree_id = load(store, recs[-1].commit).tree
    os.unlink(store.object_path(tree_id))
    r = fsck(store)
    assert (recs[-1].commit.hex, tree_id.hex) in r.dangling
    assert not r.clean
    assert find_last_intact(store, graph) == Snapshot(graph, 2, recs[1].commit)


def test_damaged_latest_version(store, graph, tree):
    recs = _history(store, graph, tree, 3)
    victim = load(store, load(store, recs[2].commit).tree).get("n").id
    with open(store.object_path(victim), "ab") as f:
        f.write(b"!")
    assert find_last_intact(store, graph) == Snapshot(graph, 2, recs[1].commit)
    assert [seq for _, seq, _ in fsck(store).impacted] == [3]


def test_all_damaged_gives_none(store, graph, tree):
    recs = _history(store, graph, tree, 2)
    shared = load(store, load(store, recs[0].commit).tree).get("shared").id
    os.unlink(store.object_path(shared))
    assert find_last_intact(store, graph) is None


def test_undamaged_is_latest(store, graph, tree):
    recs = _history(store, graph, tree, 2)
    assert find_last_intact(store, graph) == Snapshot(graph, 2, recs[1].commit)


def test_empty_graph_has_no_intact_version(store, graph):
    assert find_last_intact(store, graph) is None


def test_torn_head_and_orphans_reported(store, graph, tree):
    _history(store, graph, tree, 1)
    with open(store.root / "graphs" / "main.head", "ab") as f:
        f.write(b"0000")
    orphan, _ = store.put_object("blob", b"nobody")
    r = fsck(store)
    assert r.torn_heads == [("main", 4)]
    assert [h for h, _ in r.orphans] == [orphan.hex]
    assert not r.clean


def test_stale_lock_and_orphaned_marker(make_store, tree):
    s = make_store(lock_timeout=1)
    create_graph(s, "g")
    lock = s.root / "graphs" / "g.lock"
    lock.write_text("dead 1\n")
    os.utime(lock, (time.time() - 50,) * 2)
    (s.pending_dir / ("ab" * 32)).touch()
    r = fsck(s)
    assert r.stale_locks == ["g.lock"]
    assert r.orphaned_markers == ["ab" * 32]
    assert "stale-lock g.lock" in r.to_text()


def test_fsck_is_read_only(store, graph, tree):
    recs = _history(store, graph, tree, 3)
    os.unlink(store.object_path(load(store, recs[0].commit).tree))
    store.put_object("blob", b"orphan")
    with open(store.root / "graphs" / "main.head", "ab") as f:
        f.write(b"00")
    before = dir_digest(store.root)
    fsck(store, verify_hashes=True)
    fsck(store)
    find_last_intact(store, graph, verify_hashes=True)
    assert dir_digest(store.root) == before


def test_json_report(store, graph, tree):
    _history(store, graph, tree, 1)
    doc = json.loads(fsck(store).to_json())
    assert doc["clean"] is True
    assert set(doc) >= {"corrupt", "dangling", "impacted", "orphans", "stale_locks"}


def test_repair_is_explicit(store, graph, tree):
    recs = _history(store, graph, tree, 3)
    os.unlink(store.object_path(load(store, recs[-1].commit).tree))
    snap = find_last_intact(store, graph)
    assert len(read_history(store, graph)) == 3
    with lock_graphs(store, graph):
        rewind(store, graph, snap.seq)
    assert find_last_intact(store, graph) == Snapshot(graph, 4, recs[1].commit)

