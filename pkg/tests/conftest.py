import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graphstore import StoreConfig, create_graph, init_store  # noqa: E402
from graphstore.trees import tree_from_dict  # noqa: E402


@pytest.fixture
def make_store(tmp_path):
    counter = iter(range(1000))

    def make(durability="none", lock_timeout=5.0, gc_grace=3600.0, name=None):
        root = tmp_path / (name or f"store{next(counter)}")
        return init_store(root, StoreConfig(durability, lock_timeout, gc_grace))

    return make


@pytest.fixture
def store(make_store):
    return make_store()


@pytest.fixture
def graph(store):
    create_graph(store, "main")
    return "main"


@pytest.fixture
def tree(store):
    def build(spec, mtime=0):
        return tree_from_dict(store, spec, mtime)

    return build


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion, printed in the summary."""
    state = {"detail": ""}

    def note(number, text):
        state["n"], state["detail"] = number, text

    yield note
    if "n" in state:
        rep = getattr(request.node, "rep_call", None)
        ok = rep is not None and rep.passed
        _ACCEPTANCE[state["n"]] = f"criterion {state['n']}: {'PASS' if ok else 'FAIL'}  {state['detail']}"


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call":
        item.rep_call = rep
    return rep


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
