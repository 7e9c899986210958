import random

import pytest

from conftest import crystal_domain, measurement

from itemflow.bootstrap import bootstrap
from itemflow.errors import CorruptHistory, FragmentOverwrite, HistoryOverwrite, NotFound
from itemflow.exchange import import_descriptions
from itemflow.execution import Kernel
from itemflow.items import item_digest
from itemflow.storage import (
    Directory,
    FileStore,
    FragmentPath,
    MemoryStore,
    WriteBatch,
    replay_history,
)


@pytest.fixture(params=["memory", "file"])
def store(request, tmp_path):
    if request.param == "memory":
        return MemoryStore()
    return FileStore(str(tmp_path / "store"), fsync=False)


# --- fragment basics -------------------------------------------------------------------

def test_put_then_get_identical(store):
    path = FragmentPath("item1", "History", "0")
    store.put_fragment(path, b"<event/>")
    assert store.get_fragment(path) == b"<event/>"


def test_history_overwrite_rejected(store):
    path = FragmentPath("item1", "History", "0")
    store.put_fragment(path, b"<event/>")
    with pytest.raises(HistoryOverwrite):
        store.put_fragment(path, b"<event/>")


def test_non_viewpoint_overwrite_rejected(store):
    path = FragmentPath("item1", "Property", "Status/init")
    store.put_fragment(path, b"<property/>")
    store.put_fragment(path, b"<property/>")  # identical bytes: no-op
    with pytest.raises(FragmentOverwrite):
        store.put_fragment(path, b"<property2/>")


def test_viewpoint_overwrite_in_place(store):
    path = FragmentPath("item1", "Viewpoint", "Measurement/last")
    store.put_fragment(path, b"<viewpoint event='0'/>")
    store.put_fragment(path, b"<viewpoint event='1'/>")
    assert b"1" in store.get_fragment(path)


def test_get_missing(store):
    with pytest.raises(NotFound):
        store.get_fragment(FragmentPath("nope", "History", "0"))


def test_list_against_shadow_map(store):
    # Oracle: an independent dict of everything the test stored.
    shadow = {}
    rng = random.Random(7)
    for k in range(40):
        schema = rng.choice(["Measurement", "Calibration"])
        path = FragmentPath("item1", "Outcome", f"{schema}/0/{k}")
        store.put_fragment(path, f"<doc n='{k}'/>".encode())
        shadow[path.logical] = True
    listed = store.list_fragments("item1/Outcome/Measurement/")
    expected = sorted(k for k in shadow if k.startswith("item1/Outcome/Measurement/"))
    assert listed == expected


def test_batch_all_or_nothing(store):
    batch = WriteBatch()
    batch.put(FragmentPath("item1", "History", "0"), b"<e0/>")
    batch.put(FragmentPath("item1", "History", "0"), b"<dup/>")  # conflicts
    with pytest.raises(HistoryOverwrite):
        store.put_all(batch)
    if isinstance(store, MemoryStore):
        with pytest.raises(NotFound):
            store.get_fragment(FragmentPath("item1", "History", "0"))


def test_unicode_and_slash_safe_subpaths(store):
    path = FragmentPath("item1", "Property", "weird name:with/stuff/init")
    store.put_fragment(path, b"<property/>")
    assert store.get_fragment(path) == b"<property/>"
    assert path.logical in store.list_fragments("item1/Property/")


# --- directory ---------------------------------------------------------------------------

def test_directory_register_lookup(store):
    directory = Directory(store)
    record = directory.reserve("/ecal/crystal-0001", "id1", "Crystal", "t0")
    batch = WriteBatch()
    batch.register(record)
    store.put_all(batch)
    assert directory.lookup("/ecal/crystal-0001") == "id1"
    reloaded = Directory(store)
    assert reloaded.lookup("/ecal/crystal-0001") == "id1"
    assert reloaded.record("id1").type_name == "Crystal"


def test_directory_lookup_unknown(store):
    directory = Directory(store)
    with pytest.raises(NotFound):
        directory.lookup("/nope")


def test_directory_prefix_against_shadow(store):
    directory = Directory(store)
    shadow = {}
    batch = WriteBatch()
    for name in ["/ecal/supermodule-1/m1", "/ecal/supermodule-1/m2",
                 "/ecal/supermodule-2/m1", "/desc/types/X"]:
        record = directory.reserve(name, f"id-{name}", "T", "t0")
        shadow[name] = f"id-{name}"
        batch.register(record)
    store.put_all(batch)
    got = directory.prefix("/ecal/supermodule-1/")
    expected = sorted((n, i) for n, i in shadow.items()
                      if n.startswith("/ecal/supermodule-1/"))
    assert got == expected


def test_torn_journal_line_ignored(tmp_path):
    store = FileStore(str(tmp_path / "s"), fsync=False)
    directory = Directory(store)
    batch = WriteBatch()
    batch.register(directory.reserve("/a", "id-a", "T", "t0"))
    store.put_all(batch)
    with open(store._journal_path, "a", encoding="utf-8") as fh:
        fh.write('{"name": "/b", "id": "id-b"')  # torn mid-crash
    reloaded = Directory(store)
    assert reloaded.lookup("/a") == "id-a"
    assert not reloaded.has_name("/b")


# --- replay -----------------------------------------------------------------------------

def crystal_setup(store):
    kernel = Kernel(store)
    bootstrap(store, kernel=kernel)
    root = kernel.directory.lookup("/agents/root")
    import_descriptions(kernel, crystal_domain(), root)
    _, op = kernel.instantiate("Agent", "last", "/agents/op", root,
                               initial_properties={"Roles": "operator maintainer"})
    return kernel, root, op


def test_replay_fresh_item_equals_creation(tmp_path):
    store = FileStore(str(tmp_path / "s"), fsync=False)
    kernel, root, op = crystal_setup(store)
    _, item_id = kernel.instantiate("Crystal", "last", "c1", root)
    live = kernel.load_item(item_id)
    replayed = replay_history(store, kernel.directory, item_id)
    assert item_digest(replayed) == item_digest(live)


def test_replay_after_random_operations(tmp_path):
    # Oracle: the live in-memory state from the same operation sequence.
    store = FileStore(str(tmp_path / "s"), fsync=False)
    kernel, root, op = crystal_setup(store)
    _, item_id = kernel.instantiate("Crystal", "last", "c1", root)
    rng = random.Random(13)
    performed = 0
    step_count = 0
    while performed < 50:
        choice = rng.random()
        item = kernel.load_item(item_id)
        enabled = sorted(item.workflow.enabled_activities()) if item.workflow else []
        if choice < 0.5 and enabled:
            path = enabled[0]
            kernel.execute_transition(item_id, path, "Start", op)
            _, vertex = item.workflow.find(path)
            outcome = measurement(rng.randint(0, 100)) if vertex.outcome_schema else None
            kernel.execute_transition(item_id, path, "Complete", op, outcome=outcome)
            performed += 2
        else:
            payload = (f"<write-property><name>P{rng.randint(0, 3)}</name>"
                       f"<value>v{step_count}</value></write-property>").encode()
            kernel.execute_predefined_step(item_id, "WriteProperty", payload, op)
            performed += 1
            step_count += 1
    live = kernel.load_item(item_id)
    replayed = replay_history(store, kernel.directory, item_id)
    assert item_digest(replayed) == item_digest(live)
    assert len(live.history) >= 50


def test_replay_detects_gap(tmp_path):
    store = FileStore(str(tmp_path / "s"), fsync=False)
    kernel, root, op = crystal_setup(store)
    _, item_id = kernel.instantiate("Crystal", "last", "c1", root)
    for k in range(6):
        kernel.execute_predefined_step(
            item_id, "WriteProperty",
            f"<write-property><name>S</name><value>{k}</value></write-property>".encode(),
            root)
    import os
    victim = store._fs_path(FragmentPath(item_id, "History", "3"))
    os.unlink(victim)
    with pytest.raises(CorruptHistory, match="3"):
        replay_history(store, kernel.directory, item_id)


def test_backend_equivalence():
    # The same operation script against both backends, compared observably.
    import tempfile

    digests = []
    for backend in ("memory", "file"):
        if backend == "memory":
            store = MemoryStore()
        else:
            store = FileStore(tempfile.mkdtemp(), fsync=False)
        kernel, root, op = crystal_setup(store)
        _, item_id = kernel.instantiate("Crystal", "last", "c1", root)
        kernel.execute_transition(item_id, "Measure", "Start", op)
        kernel.execute_transition(item_id, "Measure", "Complete", op,
                                  outcome=measurement(7))
        kernel.execute_predefined_step(
            item_id, "WriteProperty",
            b"<write-property><name>Status</name><value>done</value></write-property>",
            root)
        item = kernel.load_item(item_id)
        digest = item_digest(item)
        # ids and timestamps differ run to run; structure must not
        digest["id"] = "-"
        digest["events"] = [[e[0], e[1], e[2]] for e in digest["events"]]
        fragments = [p.split("/", 1)[1] for p in store.list_fragments(item_id)]
        digests.append((digest, sorted(fragments)))
    assert digests[0] == digests[1]
