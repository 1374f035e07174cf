"""A derived path index that follows commits and can always be rebuilt."""

import shutil
import tempfile
from pathlib import Path

from graphstore import commit_one, create_graph, init_store, query_path, rebuild_index
from graphstore.trees import tree_from_dict

with tempfile.TemporaryDirectory() as tmp:
    store = init_store(Path(tmp) / "store")
    create_graph(store, "site")
    commit_one(store, "site", tree_from_dict(store, {"index.html": b"<h1>hi</h1>", "css": {"main.css": b"body{}"}}))

    print("built:", rebuild_index(store, "site", "path"))
    print("css/main.css ->", query_path(store, "site", "css/main.css"))

    commit_one(store, "site", tree_from_dict(store, {"index.html": b"<h1>hello</h1>"}), "drop css")
    print("after a commit, css/main.css ->", query_path(store, "site", "css/main.css"))

    shutil.rmtree(store.indexes_dir)
    store.indexes_dir.mkdir()
    print("index deleted and rebuilt:", rebuild_index(store, "site", "path"))
    print("index.html ->", query_path(store, "site", "index.html"))
