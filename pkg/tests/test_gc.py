import os
import random
import time

import pytest

from graphstore import collect, commit_one, fsck, lock_graphs, prune, reachable_set
from graphstore.headlog import read_history
from graphstore.objects import walk
from oracles import gc_roots, reachable, stored_ids
from scenarios import random_history
from test_txn import _partial


def _age(path, secs):
    t = time.time() - secs
    os.utime(path, (t, t))


def test_empty_store(store):
    assert reachable_set(store) == set()
    rep = collect(store, grace=0)
    assert (rep.examined, rep.deleted) == (0, 0)


def test_single_commit_reachable_exactly(store, graph, tree):
    rec = commit_one(store, graph, tree({"a": b"1", "d": {"b": b"2"}}))
    got = {o.hex for o in reachable_set(store)}
    assert got == reachable(store.root, [rec.commit.hex]) == stored_ids(store.root)
    assert len(got) == 5


def test_consistent_store_deletes_nothing(store, graph, tree):
    commit_one(store, graph, tree({"a": b"1"}))
    assert collect(store, grace=0).deleted == 0


def test_old_orphan_deleted(store, graph, tree):
    commit_one(store, graph, tree({"a": b"1"}))
    orphan, _ = store.put_object("blob", b"orphan")
    _age(store.object_path(orphan), 100)
    rep = collect(store, grace=10)
    assert (rep.deleted, rep.retained_by_grace) == (1, 0)
    assert orphan.hex not in stored_ids(store.root)
    assert stored_ids(store.root) == reachable(store.root, gc_roots(store.root), parents=False)


def test_young_orphan_retained(store):
    store.put_object("blob", b"fresh")
    rep = collect(store, grace=60)
    assert (rep.deleted, rep.retained_by_grace) == (0, 1)
    assert collect(store, grace=0).deleted == 1


def test_dedup_refreshes_age(store):
    oid, _ = store.put_object("blob", b"again")
    _age(store.object_path(oid), 1000)
    assert store.put_object("blob", b"again") == (oid, False)
    assert collect(store, grace=60).retained_by_grace == 1


def test_dry_run(store):
    oid, _ = store.put_object("blob", b"x")
    rep = collect(store, grace=0, dry_run=True)
    assert rep.deleted == 1
    assert store.has_object(oid)


def test_pruned_history_collected(store, graph, tree):
    shared = {"keep": b"shared"}
    recs = [commit_one(store, graph, tree({**shared, "v": str(i).encode()})) for i in range(5)]
    with lock_graphs(store, graph):
        prune(store, graph, 1)
    expected = reachable(store.root, gc_roots(store.root), parents=False)
    collect(store, grace=0)
    assert stored_ids(store.root) == expected
    assert not any(r.commit.hex in expected for r in recs[:4])
    assert recs[4].commit.hex in expected
    # the kept version is whole; only its parent link now points at nothing
    assert walk(store, [recs[4].commit], parents=False).missing == set()
    assert walk(store, [recs[4].commit]).missing == {recs[3].commit}
    assert fsck(store, verify_hashes=True).empty


def test_tmp_debris_removed(store):
    debris = store.objects_dir / "tmp" / "leftover"
    debris.write_bytes(b"half")
    assert collect(store, grace=3600).temp_removed == 0
    assert collect(store, grace=0).temp_removed == 1
    assert not debris.exists()


def test_pending_and_failed_markers_are_roots(store, tree):
    txn_id, cs = _partial(store, tree, 0)
    collect(store, grace=0)
    assert all(store.has_object(c) for c in cs) and store.has_object(txn_id)
    os.replace(store.pending_dir / txn_id.hex, store.failed_dir / txn_id.hex)
    collect(store, grace=0)
    assert store.has_object(txn_id)
    os.unlink(store.failed_dir / txn_id.hex)
    collect(store, grace=0)
    assert stored_ids(store.root) == set()


@pytest.mark.parametrize("seed", range(10))
def test_random_scenarios_match_oracle(make_store, seed):
    rng = random.Random(seed)
    s = make_store()
    random_history(s, rng, 30)
    expected = reachable(s.root, gc_roots(s.root), parents=False)
    collect(s, grace=0)
    assert stored_ids(s.root) == expected
    for g in ("g0", "g1", "g2"):
        for rec in read_history(s, g):
            assert not walk(s, [rec.commit], parents=False).missing
