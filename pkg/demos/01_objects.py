"""Store some content, address it by hash, and read it back."""

import tempfile
from pathlib import Path

from graphstore import compute_id, init_store
from graphstore.objects import load
from graphstore.trees import export_tree, tree_from_dict

with tempfile.TemporaryDirectory() as tmp:
    store = init_store(Path(tmp) / "store")

    oid, created = store.put_object("blob", b"hello\n")
    print("blob", oid.hex, "created" if created else "deduplicated")
    again, created = store.put_object("blob", b"hello\n")
    print("same bytes, same id:", again == oid, "| created the second time:", created)
    print("id is computable without a store:", compute_id("blob", b"hello\n") == oid)
    print("lives at", store.object_path(oid).relative_to(store.root))

    tree = tree_from_dict(store, {"README": b"hello\n", "src": {"main.py": b"print('hi')\n"}})
    print("\ntree", tree.hex)
    for entry in load(store, tree).entries:
        print(f"  {entry.kind.value:5} {entry.id.hex[:12]}  {entry.name}")

    out = Path(tmp) / "checkout"
    files = export_tree(store, tree, out)
    print(f"\nexported {files} files:", sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()))
