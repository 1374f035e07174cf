"""Kill-point harness: run a commit in a forked child and ``os._exit`` at a chosen step.

The parent then reopens the store (which runs recovery) and checks the
outcome against expectations derived from the step trace alone.
"""

from __future__ import annotations

import multiprocessing as mp
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

from graphstore import (
    CommitObject,
    ObjectId,
    StoreConfig,
    Update,
    commit,
    compute_id,
    encode_object,
    find_last_intact,
    fsck,
    init_store,
    open_store,
    read_history,
)
from graphstore.headlog import create_graph
from graphstore.trees import tree_from_dict
from graphstore.txn import snapshot

KILLED = 77
FIXED_TIME = 1_000_000
# A step at which the transaction becomes decided: once reached, recovery must apply it.
DECISION_SITES = {"commit.appended", "txn.marker_created"}


@dataclass
class Scenario:
    root: Path
    graphs: list[str]
    old: dict[str, tuple[int, str]]  # graph -> (seq, commit hex) before the commit
    new_tree: dict[str, str]
    expected_commit: dict[str, str]  # oracle id of the commit the child would create


def build(root: Path, graphs: list[str], lock_timeout: float = 0.25) -> Scenario:
    s = init_store(root, StoreConfig("none", lock_timeout, 3600))
    old, trees, expected = {}, {}, {}
    for g in graphs:
        create_graph(s, g)
        t0 = tree_from_dict(s, {"v": b"0", "g": g.encode()})
        commit(s, [Update(g, snapshot(s, g), t0, "seed")], time=FIXED_TIME - 1)
        snap = snapshot(s, g)
        old[g] = (snap.seq, snap.commit.hex)
        t1 = tree_from_dict(s, {"v": b"1", "g": g.encode(), "d": {"x": g.encode() * 3}})
        trees[g] = t1.hex
        _, content = encode_object(CommitObject(t1, (snap.commit,), FIXED_TIME, "next"))
        expected[g] = compute_id("commit", content).hex
    return Scenario(root, graphs, old, trees, expected)


def _do_commit(sc: Scenario, store) -> None:
    updates = [Update(g, snapshot(store, g), ObjectId.from_hex(sc.new_tree[g]), "next") for g in sc.graphs]
    commit(store, updates, time=FIXED_TIME)


def trace(sc: Scenario, scratch: Path) -> list[str]:
    """Step names hit by a complete, uninterrupted run (on a scratch copy)."""
    shutil.copytree(sc.root, scratch)
    s = open_store(scratch, recover=False)
    steps: list[str] = []
    s.step_hook = steps.append
    _do_commit(sc, s)
    shutil.rmtree(scratch)
    return steps


def kill_points(steps: list[str]) -> list[tuple[str, int]]:
    seen: dict[str, int] = {}
    out = []
    for st in steps:
        seen[st] = seen.get(st, 0) + 1
        out.append((st, seen[st]))
    return out


def _child(root: Path, sc: Scenario, site: str, nth: int) -> None:
    s = open_store(root, recover=False)
    count = 0

    def hook(step):
        nonlocal count
        if step == site:
            count += 1
            if count == nth:
                os._exit(KILLED)

    s.step_hook = hook
    _do_commit(sc, s)
    os._exit(0)


def run_killed(sc: Scenario, root: Path, site: str, nth: int) -> int:
    p = mp.get_context("fork").Process(target=_child, args=(root, sc, site, nth))
    p.start()
    p.join(60)
    return p.exitcode


def check(sc: Scenario, root: Path, decided: bool) -> list[str]:
    """Reopen (recover) and return a list of violated expectations."""
    problems = []
    s = open_store(root)
    applied = []
    for g in sc.graphs:
        hist = read_history(s, g)
        seq0, c0 = sc.old[g]
        if [r.seq for r in hist] == list(range(1, seq0 + 1)):
            applied.append(False)
            want = (seq0, c0)
        elif len(hist) == seq0 + 1 and hist[-1].commit.hex == sc.expected_commit[g]:
            applied.append(True)
            want = (seq0 + 1, sc.expected_commit[g])
        else:
            problems.append(f"{g}: unexpected history {[(r.seq, r.commit.hex[:8]) for r in hist]}")
            continue
        snap = find_last_intact(s, g, verify_hashes=True)
        if snap is None or (snap.seq, snap.commit.hex) != want:
            problems.append(f"{g}: find_last_intact {snap} != {want}")
    if applied and len(set(applied)) != 1:
        problems.append(f"partial application {dict(zip(sc.graphs, applied))}")
    elif applied and applied[0] != decided:
        problems.append(f"applied={applied[0]} but decided={decided}")
    report = fsck(s, verify_hashes=True)
    if not report.clean:
        problems.append("fsck not clean:\n" + report.to_text())
    if any(os.scandir(s.pending_dir)):
        problems.append("pending marker survived recovery")
    # The store must stay writable: stale locks left by the dead child get broken.
    t = tree_from_dict(s, {"after": b"crash"})
    recs = commit(s, [Update(g, snapshot(s, g), t, "after") for g in sc.graphs])
    if any(r.seq != len(read_history(s, r_g)) for r, r_g in zip(recs, sc.graphs)):
        problems.append("follow-up commit misnumbered")
    return problems


def decided_at(steps: list[str], index: int) -> bool:
    return any(st in DECISION_SITES for st in steps[: index + 1])
