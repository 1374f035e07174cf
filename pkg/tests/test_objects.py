import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphstore import (
    CommitObject,
    CorruptObject,
    EncodeError,
    Kind,
    ObjectId,
    ParseError,
    StoreConfig,
    TreeEntry,
    TreeObject,
    TxnRecord,
    TxnUpdate,
    closure,
    compute_id,
    decode_object,
    encode_object,
    init_store,
    walk,
)
from graphstore.objects import load, put
from graphstore.trees import tree_from_dict
from oracles import reachable, stored_ids

T = ObjectId(bytes(range(32)))


def test_empty_tree_has_empty_content():
    assert encode_object(TreeObject(())) == (Kind.TREE, b"")


def test_unsorted_tree_rejected():
    entries = (TreeEntry(Kind.BLOB, T, 0, "b"), TreeEntry(Kind.BLOB, T, 0, "a"))
    with pytest.raises(EncodeError) as exc:
        encode_object(TreeObject(entries))
    assert exc.value.field == "entries" and "unsorted" in exc.value.reason


@pytest.mark.parametrize("name", ["", "a/b", "nul\0", "line\nbreak", "x" * 256])
def test_bad_names_rejected(name):
    with pytest.raises(EncodeError) as exc:
        encode_object(TreeObject((TreeEntry(Kind.BLOB, T, 0, name),)))
    assert exc.value.field == "name"


def test_commit_encoding_is_forced_by_grammar():
    kind, content = encode_object(CommitObject(T, (), 0, "init"))
    assert kind is Kind.COMMIT
    assert content == f"tree {T.hex}\ntime 0\n\ninit".encode()


def test_txn_encoding():
    rec = TxnRecord((TxnUpdate("a", 3, T), TxnUpdate("b", 0, T)), 9)
    assert encode_object(rec)[1] == f"graph a 3 {T.hex}\ngraph b 0 {T.hex}\ntime 9\n".encode()
    with pytest.raises(EncodeError):
        encode_object(TxnRecord((), 0))
    with pytest.raises(EncodeError):
        encode_object(TxnRecord((TxnUpdate("b", 0, T), TxnUpdate("a", 0, T))))


def test_decode_duplicate_name():
    line = f"blob {T.hex} 0 a\n".encode()
    with pytest.raises(ParseError) as exc:
        decode_object("tree", line + line)
    assert exc.value.offset == len(line) + len(line) - 2


def test_decode_commit_without_separator():
    with pytest.raises(ParseError):
        decode_object("commit", f"tree {T.hex}\ntime 0\ninit".encode())


@pytest.mark.parametrize(
    "kind, content",
    [
        ("tree", f"blob {T.hex} 00 a\n"),  # leading zero
        ("tree", f"blob {T.hex.upper()} 0 a\n"),
        ("tree", f"link {T.hex} 0 a\n"),
        ("tree", f"blob {T.hex} 0 a"),  # unterminated
        ("commit", f"tree {T.hex}\ntime 0\n"),  # no separator line at all
        ("commit", f"time 0\n\n"),
        ("txn", f"graph a 0 {T.hex}\ntime 0\nextra"),
        ("txn", "time 0\n"),
        ("txn", f"graph b 0 {T.hex}\ngraph a 0 {T.hex}\ntime 0\n"),
    ],
)
def test_noncanonical_rejected(kind, content):
    with pytest.raises(ParseError):
        decode_object(kind, content.encode())


oids = st.binary(min_size=32, max_size=32).map(ObjectId)
names = st.text(
    st.characters(blacklist_characters="/\0\n", blacklist_categories=("Cs",)), min_size=1, max_size=40
).filter(lambda n: len(n.encode()) <= 255)
uints = st.integers(0, 2**40)


@st.composite
def trees(draw):
    ns = sorted(set(draw(st.lists(names, max_size=8))), key=str.encode)
    return TreeObject(tuple(TreeEntry(draw(st.sampled_from([Kind.BLOB, Kind.TREE])), draw(oids), draw(uints), n) for n in ns))


messages = st.text(st.characters(blacklist_categories=("Cs",)), max_size=100)
commits = st.builds(CommitObject, oids, st.lists(oids, max_size=4).map(tuple), uints, messages)
graph_names = st.from_regex(r"[A-Za-z0-9._-]{1,20}", fullmatch=True)


@st.composite
def txns(draw):
    gs = sorted(set(draw(st.lists(graph_names, min_size=1, max_size=5))), key=str.encode)
    return TxnRecord(tuple(TxnUpdate(g, draw(uints), draw(oids)) for g in gs), draw(uints))


@settings(max_examples=300)
@given(st.one_of(trees(), commits, txns()))
def test_codec_bijection(obj):
    kind, content = encode_object(obj)
    back = decode_object(kind, content)
    assert back == obj
    assert encode_object(back) == (kind, content)


def test_equal_entries_equal_ids(store, tmp_path):
    other = init_store(tmp_path / "other", StoreConfig("none"))
    t = TreeObject((TreeEntry(Kind.BLOB, T, 5, "x"),))
    assert put(store, t) == put(other, TreeObject((TreeEntry(Kind.BLOB, T, 5, "x"),)))


def test_closure_empty(store):
    assert closure(store, []) == set()


def test_closure_three_objects(store):
    b, _ = store.put_object("blob", b"payload")
    t = put(store, TreeObject((TreeEntry(Kind.BLOB, b, 0, "f"),)))
    c = put(store, CommitObject(t, (), 0, "c"))
    got = closure(store, [c])
    assert got == {c, t, b}
    assert {o.hex for o in got} == reachable(store.root, [c.hex]) == stored_ids(store.root)


def test_closure_diamond_counts_shared_once(store, tree):
    shared = tree({"s": b"shared", "deep": {"x": b"x"}})
    b1, _ = store.put_object("blob", b"1")
    b2, _ = store.put_object("blob", b"2")
    left = put(store, TreeObject((TreeEntry(Kind.BLOB, b1, 0, "l"), TreeEntry(Kind.TREE, shared, 0, "s"))))
    right = put(store, TreeObject((TreeEntry(Kind.BLOB, b2, 0, "r"), TreeEntry(Kind.TREE, shared, 0, "s"))))
    root = put(store, CommitObject(put(store, TreeObject((TreeEntry(Kind.TREE, left, 0, "a"), TreeEntry(Kind.TREE, right, 0, "b")))), (), 0))
    got = closure(store, [root])
    assert {o.hex for o in got} == reachable(store.root, [root.hex])
    assert len(got) == len(stored_ids(store.root))


def test_missing_refs_reported_not_raised(store):
    ghost = compute_id("blob", b"absent")
    t = put(store, TreeObject((TreeEntry(Kind.BLOB, ghost, 0, "g"),)))
    r = walk(store, [t])
    assert r.objects == {t} and r.missing == {ghost}


def test_load_wrong_kind_is_corrupt(store):
    b, _ = store.put_object("blob", b"x")
    with pytest.raises(CorruptObject):
        load(store, b, Kind.TREE)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.binary(max_size=8), max_size=4), min_size=1, max_size=6), st.data())
def test_closure_is_monotone_union(tmp_path_factory, forest, data):
    s = init_store(tmp_path_factory.mktemp("mono") / "s", StoreConfig("none"))
    roots, prev = [], ()
    for i, blobs in enumerate(forest):
        t = tree_from_dict(s, {f"f{j}": b for j, b in enumerate(blobs)})
        c = put(s, CommitObject(t, prev, i))
        prev = (c,) if data.draw(st.booleans()) else ()
        roots.append(c)
    r1 = data.draw(st.lists(st.sampled_from(roots)))
    r2 = data.draw(st.lists(st.sampled_from(roots)))
    assert closure(s, r1 + r2) == closure(s, r1) | closure(s, r2)


def test_tamper_changes_every_ancestor(store, tree):
    t1 = tree({"d": {"e": {"f": b"original"}}, "g": b"keep"})
    t2 = tree({"d": {"e": {"f": b"tampered"}}, "g": b"keep"})
    c1 = put(store, CommitObject(t1, (), 0, "x"))
    c2 = put(store, CommitObject(t2, (), 0, "x"))
    assert t1 != t2 and c1 != c2
    a, b = load(store, t1), load(store, t2)
    assert a.get("g") == b.get("g")
    assert a.get("d").id != b.get("d").id
    assert load(store, a.get("d").id).get("e").id != load(store, b.get("d").id).get("e").id
    child1 = put(store, CommitObject(t1, (c1,), 1))
    child2 = put(store, CommitObject(t1, (c2,), 1))
    assert child1 != child2
