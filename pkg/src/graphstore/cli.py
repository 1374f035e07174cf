"""Command-line frontend.

stdout carries machine-parseable results only; diagnostics go to stderr as
``<ErrorClass>: <message>``. Exit codes: 0 ok, 1 domain error, 2 usage,
3 corruption detected, 4 I/O.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import errors
from .errors import GraphStoreError, StaleHead
from .gc import collect
from .headlog import create_graph, latest_seq, list_graphs, lock_graphs, prune, read_history, rewind
from .indexers import query_path, rebuild_index
from .integrity import find_last_intact, fsck
from .store import Durability, Kind, ObjectId, Store, StoreConfig, compute_id, init_store, open_store
from .sync import pull, push, serve
from .trees import export_tree, write_tree
from .txn import Snapshot, Update, commit


def _store(args) -> Store:
    root = args.store or os.environ.get("GRAPHSTORE_ROOT")
    if not root:
        raise _Usage("no store given: pass --store or set GRAPHSTORE_ROOT")
    return open_store(root)


class _Usage(Exception):
    pass


def _oid(text: str) -> ObjectId:
    try:
        return ObjectId.from_hex(text)
    except ValueError as e:
        raise _Usage(str(e)) from None


def _expected(store: Store, graph: str, seq: int | None) -> Snapshot:
    records = read_history(store, graph)
    if seq is None:
        return Snapshot(graph, records[-1].seq if records else latest_seq(store, graph), records[-1].commit if records else None)
    if seq == 0 and not records:
        return Snapshot(graph, 0, None)
    for r in records:
        if r.seq == seq:
            return Snapshot(graph, seq, r.commit)
    raise StaleHead(graph, seq, records[-1].seq if records else latest_seq(store, graph))


def cmd_init(args, out):
    root = args.store or os.environ.get("GRAPHSTORE_ROOT")
    if not root:
        raise _Usage("no store given: pass --store or set GRAPHSTORE_ROOT")
    init_store(root, StoreConfig(Durability(args.durability), args.lock_timeout, args.gc_grace))


def cmd_hash_object(args, out):
    data = sys.stdin.buffer.read()
    if args.write:
        oid, _ = _store(args).put_object(args.kind, data)
    else:
        oid = compute_id(args.kind, data)
    out.write(f"{oid.hex}\n")


def cmd_cat_object(args, out):
    obj = _store(args).get_object(_oid(args.id))
    if args.type:
        out.write(f"{obj.kind.value}\n")
    else:
        out.flush()
        sys.stdout.buffer.write(obj.content)
        sys.stdout.buffer.flush()


def cmd_object_path(args, out):
    exists, path = _store(args).locate_object(_oid(args.id))
    out.write(f"{path}\n")
    if not exists:
        raise errors.NotFound(f"object {args.id} not stored")


def cmd_write_tree(args, out):
    out.write(f"{write_tree(_store(args), args.dir).hex}\n")


def cmd_export_tree(args, out):
    export_tree(_store(args), _oid(args.id), args.dir)


def cmd_graph(args, out):
    store = _store(args)
    if args.action == "create":
        if not args.name:
            raise _Usage("graph create needs a name")
        create_graph(store, args.name)
    else:
        for name in list_graphs(store):
            out.write(f"{name}\n")


def cmd_commit(args, out):
    store = _store(args)
    expected = _expected(store, args.graph, args.expect_seq)
    (rec,) = commit(store, [Update(args.graph, expected, _oid(args.tree), args.message)])
    out.write(f"{rec.seq} {rec.commit.hex}\n")


def cmd_commit_multi(args, out):
    store = _store(args)
    updates = []
    for n, line in enumerate(sys.stdin.read().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) not in (2, 3):
            raise _Usage(f"stdin line {n}: expected '<graph> <tree-id> [<expect-seq>]'")
        seq = int(parts[2]) if len(parts) == 3 else None
        updates.append(Update(parts[0], _expected(store, parts[0], seq), _oid(parts[1]), args.message))
    if not updates:
        raise _Usage("commit-multi read no updates from stdin")
    for u, rec in zip(updates, commit(store, updates)):
        out.write(f"{u.graph} {rec.seq} {rec.commit.hex}\n")


def cmd_log(args, out):
    for r in read_history(_store(args), args.graph):
        out.write(f"{r.seq} {r.commit.hex}\n")


def cmd_rewind(args, out):
    store = _store(args)
    with lock_graphs(store, args.graph):
        rec = rewind(store, args.graph, args.seq)
    out.write(f"{rec.seq} {rec.commit.hex}\n")


def cmd_prune(args, out):
    store = _store(args)
    with lock_graphs(store, args.graph):
        kept = prune(store, args.graph, args.keep)
    if kept:
        out.write(f"base {kept[0].seq}\n")


def cmd_gc(args, out):
    out.write(collect(_store(args), grace=args.grace, dry_run=args.dry_run).to_text())


def cmd_fsck(args, out):
    store = _store(args)
    report = fsck(store, verify_hashes=args.verify_hashes)
    out.write(report.to_json() + "\n" if args.json else report.to_text())
    if args.repair_head:
        for name in list_graphs(store):
            with lock_graphs(store, name):
                records = read_history(store, name)
                snap = find_last_intact(store, name, verify_hashes=args.verify_hashes)
                if records and snap is not None and snap.seq != records[-1].seq:
                    rec = rewind(store, name, snap.seq)
                    print(f"repaired {name}: seq {rec.seq} restores seq {snap.seq}", file=sys.stderr)
                elif records and snap is None:
                    print(f"warning: {name} has no intact version", file=sys.stderr)
    if not report.clean:
        return errors.EXIT_CORRUPT
    return 0


def cmd_serve(args, out):
    serve(_store(args), args.listen)


def cmd_push(args, out):
    rep = push(_store(args), args.addr, args.graph, force=args.force)
    out.write(f"objects_sent {rep.objects_sent}\nrecords_appended {rep.records_appended}\n")


def cmd_pull(args, out):
    rep = pull(_store(args), args.addr, args.graph)
    out.write(f"objects_received {rep.objects_sent}\nrecords_appended {rep.records_appended}\n")


def cmd_index(args, out):
    store = _store(args)
    if args.action == "build":
        if len(args.rest) != 1:
            raise _Usage("index build <graph> <indexer>")
        stats = rebuild_index(store, args.graph, args.rest[0])
        out.write(f"entries {stats.entries}\n")
    else:
        if len(args.rest) != 1:
            raise _Usage("index query <graph> <path>")
        oid = query_path(store, args.graph, args.rest[0])
        if oid is None:
            raise errors.NotFound(f"no entry for {args.rest[0]!r}")
        out.write(f"{oid.hex}\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphstore", description=__doc__.splitlines()[0])
    p.add_argument("--store", help="store root (default: $GRAPHSTORE_ROOT)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init")
    s.add_argument("--durability", choices=[d.value for d in Durability], default="full")
    s.add_argument("--lock-timeout", type=float, default=60.0)
    s.add_argument("--gc-grace", type=float, default=3600.0)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("hash-object")
    s.add_argument("kind", choices=[k.value for k in Kind])
    s.add_argument("-w", "--write", action="store_true", help="also store the object")
    s.set_defaults(func=cmd_hash_object)

    s = sub.add_parser("cat-object")
    s.add_argument("id")
    s.add_argument("-t", "--type", action="store_true", help="print the kind instead of the content")
    s.set_defaults(func=cmd_cat_object)

    s = sub.add_parser("object-path")
    s.add_argument("id")
    s.set_defaults(func=cmd_object_path)

    s = sub.add_parser("write-tree")
    s.add_argument("dir")
    s.set_defaults(func=cmd_write_tree)

    s = sub.add_parser("export-tree")
    s.add_argument("id")
    s.add_argument("dir")
    s.set_defaults(func=cmd_export_tree)

    s = sub.add_parser("graph")
    s.add_argument("action", choices=["create", "list"])
    s.add_argument("name", nargs="?")
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("commit")
    s.add_argument("graph")
    s.add_argument("--tree", required=True)
    s.add_argument("-m", "--message", default="")
    s.add_argument("--expect-seq", type=int)
    s.set_defaults(func=cmd_commit)

    s = sub.add_parser("commit-multi", help="stdin lines: <graph> <tree-id> [<expect-seq>]")
    s.add_argument("-m", "--message", default="")
    s.set_defaults(func=cmd_commit_multi)

    s = sub.add_parser("log")
    s.add_argument("graph")
    s.set_defaults(func=cmd_log)

    s = sub.add_parser("rewind")
    s.add_argument("graph")
    s.add_argument("seq", type=int)
    s.set_defaults(func=cmd_rewind)

    s = sub.add_parser("prune")
    s.add_argument("graph")
    s.add_argument("--keep", type=int, required=True)
    s.set_defaults(func=cmd_prune)

    s = sub.add_parser("gc")
    s.add_argument("--grace", type=float)
    s.add_argument("--dry-run", action="store_true")
    s.set_defaults(func=cmd_gc)

    s = sub.add_parser("fsck")
    s.add_argument("--verify-hashes", action="store_true")
    s.add_argument("--repair-head", action="store_true", help="rewind damaged graphs to their last intact version")
    s.add_argument("--json", action="store_true", help="structured output")
    s.set_defaults(func=cmd_fsck)

    s = sub.add_parser("serve")
    s.add_argument("--listen", required=True, help="host:port or a unix socket path")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("push")
    s.add_argument("addr")
    s.add_argument("graph")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_push)

    s = sub.add_parser("pull")
    s.add_argument("addr")
    s.add_argument("graph")
    s.set_defaults(func=cmd_pull)

    s = sub.add_parser("index")
    s.add_argument("action", choices=["build", "query"])
    s.add_argument("graph")
    s.add_argument("rest", nargs="*")
    s.set_defaults(func=cmd_index)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = sys.stdout
    try:
        code = args.func(args, out)
        out.flush()
        return code or 0
    except _Usage as e:
        print(f"UsageError: {e}", file=sys.stderr)
        return errors.EXIT_USAGE
    except GraphStoreError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"IoError: {e}", file=sys.stderr)
        return errors.EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
