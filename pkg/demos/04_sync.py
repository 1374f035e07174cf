"""Push a graph to a server, then push again and watch only the new objects travel."""

import tempfile
import threading
from pathlib import Path

from graphstore import commit_one, create_graph, init_store, make_server, pull, push, read_history
from graphstore.trees import tree_from_dict

with tempfile.TemporaryDirectory() as tmp:
    local = init_store(Path(tmp) / "local")
    remote = init_store(Path(tmp) / "remote")
    create_graph(local, "docs")

    big = {f"chapter{i}": bytes([i]) * 1000 for i in range(20)}
    commit_one(local, "docs", tree_from_dict(local, big), "draft")

    server = make_server(remote, "127.0.0.1:0")
    host, port = server.server_address
    threading.Thread(target=server.serve_forever, daemon=True).start()
    addr = f"{host}:{port}"

    print("first push:", push(local, addr, "docs"))
    big["chapter3"] = b"rewritten"
    commit_one(local, "docs", tree_from_dict(local, big), "edit one chapter")
    print("second push:", push(local, addr, "docs"))
    print("nothing new:", push(local, addr, "docs"))

    mirror = init_store(Path(tmp) / "mirror")
    print("pull into a fresh store:", pull(mirror, addr, "docs"))
    same = [r.commit for r in read_history(mirror, "docs")] == [r.commit for r in read_history(local, "docs")]
    print("mirror history matches:", same)
    server.shutdown()
    server.server_close()
