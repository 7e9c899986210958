"""Acceptance criteria, one test per criterion, one PASS line each.

The scaled workload and crash recovery drive a real file-backed server
over HTTP and take a few minutes; run with ``pytest -s tests/test_acceptance.py``
to watch the per-criterion lines.
"""

import os
import random
import sys
import tempfile
import threading
import time

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "scripts"))

from conftest import measurement

import test_workflow as wf_oracle

from itemflow import xmlio
from itemflow.bootstrap import bootstrap
from itemflow.descriptions import (
    DirectorySource,
    PropertyTemplate,
    instantiate_item,
    item_description_document,
    resolve_description,
)
from itemflow.errors import (
    DecisionScriptFailed,
    SchemaValidationFailed,
    ScriptFailed,
    TypeMismatch,
)
from itemflow.execution import Kernel
from itemflow.exchange import import_descriptions, parse_exchange
from itemflow.items import Collection, Slot, assign_slot, create_item, item_digest
from itemflow.server import serve
from itemflow.storage import FileStore, FragmentPath, replay_history
from itemflow.wireclient import Client
from itemflow.workflow import serialize_structure

from crash_recovery import run_crash_cycles
from scaled_workload import domain_exchange, run_workload

WORKLOAD_BUDGET_SECONDS = 600


def report(criterion: str) -> None:
    print(f"\nACCEPTANCE {criterion}: PASS")


# --- fast criteria first --------------------------------------------------------------


def test_workflow_semantics_oracle():
    """Generated graphs up to 12 vertices match the brute-force enumerator."""
    rng = random.Random(2026)
    labels = "ABCDEFGH"

    def gen(budget, depth=0):
        kind = rng.choice(["act"] * 2 + ["seq", "par", "xor", "loop"])
        if budget <= 1 or depth > 3:
            kind = "act"
        if kind == "act":
            return wf_oracle.Act(rng.choice(labels) + str(rng.randrange(1000)))
        if kind == "seq":
            return wf_oracle.Seq(gen(budget // 2, depth + 1),
                                 gen(budget - budget // 2, depth + 1))
        if kind == "par":
            return wf_oracle.Par(gen(budget // 2, depth + 1),
                                 gen(budget - budget // 2, depth + 1))
        if kind == "xor":
            return wf_oracle.Xor(rng.choice(["a", "b"]),
                                 {"a": gen(budget // 2, depth + 1),
                                  "b": gen(budget - budget // 2, depth + 1)})
        body = gen(budget - 1, depth + 1)
        if oracle_min(body) == 0:
            return body
        return wf_oracle.Loop(f"L{rng.randrange(10**6)}", rng.randint(0, 2), body)

    def oracle_min(node):
        if isinstance(node, wf_oracle.Act):
            return 1
        if isinstance(node, (wf_oracle.Seq, wf_oracle.Par)):
            return sum(oracle_min(p) for p in node.parts)
        if isinstance(node, wf_oracle.Xor):
            return oracle_min(node.branches[node.chosen])
        return node.times * oracle_min(node.body)

    checked_states = 0
    accepted = 0
    while accepted < 300:
        structure = gen(5)
        graph, _ = wf_oracle.compile_structure(structure)
        if len(graph.vertices) > 12:
            continue
        accepted += 1
        checked_states += wf_oracle.exhaustive_compare(structure)
    assert checked_states > 1000
    report("workflow-semantics-oracle")


def test_typed_slot_enforcement():
    """Randomized assignments agree with a brute-force constraint check."""
    rng = random.Random(99)
    properties = ["Type", "Grade", "Batch"]
    values = ["SparkPlug", "Crystal", "A", "B", "x1"]
    agreements = 0
    for trial in range(1500):
        constraints = tuple(
            (rng.choice(properties), rng.choice(values))
            for _ in range(rng.randint(0, 3)))
        holder = create_item(f"h{trial}", f"holder-{trial}", "Holder")
        holder.collections["C"] = Collection("C", [Slot(0, constraints)])
        target = create_item(f"t{trial}", f"target-{trial}", rng.choice(values))
        for prop in properties[1:]:
            if rng.random() < 0.7:
                target.properties[prop] = __import__("itemflow.items", fromlist=["Property"]).Property(prop, rng.choice(values))
        # Brute-force property check, written straight from the definition.
        expected_ok = all(
            (target.properties[p].value if p in target.properties else None) == v
            for p, v in constraints)
        try:
            assign_slot(holder, "C", 0, target)
            got_ok = True
        except TypeMismatch:
            got_ok = False
        assert got_ok == expected_ok
        if got_ok:
            assert holder.collections["C"].slot(0).member == target.id
        agreements += 1
    assert agreements == 1500  # 100% agreement
    report("typed-slot-enforcement")


@pytest.fixture
def file_kernel(tmp_path):
    store = FileStore(str(tmp_path / "store"), fsync=True)
    kernel = Kernel(store)
    bootstrap(store, kernel=kernel)
    return kernel


def _crystal_setup(kernel):
    from conftest import crystal_domain

    root = kernel.directory.lookup("/agents/root")
    import_descriptions(kernel, crystal_domain(), root)
    kernel.execute_predefined_step(
        root, "WriteProperty",
        b"<write-property><name>Roles</name>"
        b"<value>maintainer admin operator</value></write-property>", root)
    return root


def test_instantiation_independence(file_kernel):
    """1,000 randomized (snapshot, mutate-description, compare) trials."""
    kernel = file_kernel
    root = _crystal_setup(kernel)
    source = DirectorySource(kernel.store, kernel.directory)
    desc_id = kernel.directory.lookup("/desc/types/Crystal")
    rng = random.Random(7)
    differences = 0
    for trial in range(1000):
        snapshot = resolve_description(source, "Crystal", "last")
        item = instantiate_item(snapshot, f"trial{trial}", f"/t/{trial}")
        before = item_digest(item)
        structure_before = xmlio.canonical_bytes(serialize_structure(item.workflow))
        # Mutate the description: new template default, sometimes a new
        # workflow reference version.
        doc = xmlio.canonical_bytes(item_description_document(
            "Crystal",
            [PropertyTemplate("Status", f"gen-{rng.randrange(10**6)}", True)],
            workflow_ref=("CrystalLife", "last")))
        kernel.execute_transition(desc_id, "Edit", "Start", root)
        kernel.execute_transition(desc_id, "Edit", "Complete", root, outcome=doc)
        if item_digest(item) != before:
            differences += 1
        if xmlio.canonical_bytes(serialize_structure(item.workflow)) != structure_before:
            differences += 1
    assert differences == 0
    report("instantiation-independence")


def test_atomicity_under_fault_injection(file_kernel):
    """Every failure point leaves history length and all fragments unchanged."""
    from test_execution import FailingStore, failing_script_domain

    kernel = file_kernel
    root = _crystal_setup(kernel)

    # Wire a decision split and a sabotaged activity script.
    domain = parse_exchange(domain_exchange({"modules": 1, "subs": 1, "crystals": 1}))
    import_descriptions(kernel, domain, root)
    failing_script_domain(
        kernel, root,
        "ctx.write_property('Status', 'halfway')\nraise RuntimeError('sabotage')")
    kernel.execute_predefined_step(
        root, "WriteProperty",
        b"<write-property><name>Roles</name>"
        b"<value>maintainer admin operator builder</value></write-property>", root)

    def full_state(item_id):
        return (item_digest(kernel.load_item(item_id)),
                [(p, kernel.store.get_fragment(FragmentPath.parse(p)))
                 for p in kernel.store.list_fragments(item_id)])

    failures = 0

    # 1. validation failure
    _, c1 = kernel.instantiate("Crystal", "last", "a1", root)
    kernel.execute_transition(c1, "Measure", "Start", root)
    before = full_state(c1)
    with pytest.raises(SchemaValidationFailed):
        kernel.execute_transition(c1, "Measure", "Complete", root,
                                  outcome=measurement(101))
    failures += int(full_state(c1) != before)

    # 2. decision script failure
    from itemflow.descriptions import composite_def_document
    from itemflow.exchange import ExchangeFile
    from itemflow.scripting import ScriptDefinition, script_definition_document

    gate_domain = ExchangeFile()
    gate_domain.add("script", "Exploder", [xmlio.canonical_bytes(
        script_definition_document(ScriptDefinition(
            name="Exploder", version=0, language_tag="expr",
            source="missing_input == 1")))])
    gate_domain.add("composite", "ExplodingLife", [xmlio.canonical_bytes(
        composite_def_document(
            "ExplodingLife",
            vertices=[
                {"kind": "start", "name": "start"},
                {"kind": "activity", "name": "Measure", "ref": "Measure",
                 "version": "last"},
                {"kind": "xor-split", "name": "Gate", "script": "Exploder",
                 "script-version": "0"},
                {"kind": "activity", "name": "A", "ref": "Mount", "version": "last"},
                {"kind": "activity", "name": "B", "ref": "Mount", "version": "last"},
                {"kind": "terminal", "name": "end"},
            ],
            edges=[
                {"from": "start", "to": "Measure"},
                {"from": "Measure", "to": "Gate"},
                {"from": "Gate", "label": "true", "to": "A"},
                {"from": "Gate", "label": "false", "to": "B"},
                {"from": "A", "to": "end"},
                {"from": "B", "to": "end"},
            ]))])
    gate_domain.add("item-type", "Exploding", [xmlio.canonical_bytes(
        item_description_document("Exploding", [],
                                  workflow_ref=("ExplodingLife", "last")))])
    import_descriptions(kernel, gate_domain, root)
    _, c2 = kernel.instantiate("Exploding", "last", "a2", root)
    kernel.execute_transition(c2, "Measure", "Start", root)
    before = full_state(c2)
    with pytest.raises(DecisionScriptFailed):
        kernel.execute_transition(c2, "Measure", "Complete", root,
                                  outcome=measurement(5))
    failures += int(full_state(c2) != before)

    # 3. activity script failure
    _, c3 = kernel.instantiate("WiredType", "last", "a3", root)
    kernel.execute_transition(c3, "Wired", "Start", root)
    before = full_state(c3)
    with pytest.raises(ScriptFailed):
        kernel.execute_transition(c3, "Wired", "Complete", root,
                                  outcome=measurement(5))
    failures += int(full_state(c3) != before)

    # 4. storage put failure
    _, c4 = kernel.instantiate("Crystal", "last", "a4", root)
    kernel.execute_transition(c4, "Measure", "Start", root)
    before = full_state(c4)
    wrapped = FailingStore(kernel.store)
    kernel.store = wrapped
    wrapped.fail_next = True
    with pytest.raises(OSError):
        kernel.execute_transition(c4, "Measure", "Complete", root,
                                  outcome=measurement(5))
    kernel.store = wrapped.inner
    failures += int(full_state(c4) != before)

    assert failures == 0  # zero tolerance
    report("atomicity-fault-injection")


def test_version_coexistence(file_kernel, tmp_path):
    """The spark-plug narrative: #123 from v0 and #124 from v1 both complete,
    and #123's workflow stays bit-identical to its instantiation-time copy."""
    kernel = file_kernel
    root = _crystal_setup(kernel)
    plug_v0 = xmlio.canonical_bytes(item_description_document(
        "SparkPlug", [PropertyTemplate("Status", "boxed", True)],
        workflow_ref=("CrystalLife", 0), naming_pattern="/plugs/{name}"))
    plug_v1 = xmlio.canonical_bytes(item_description_document(
        "SparkPlug", [PropertyTemplate("Status", "improved", True)],
        workflow_ref=("CrystalLife", 0), naming_pattern="/plugs/{name}"))
    kernel.instantiate("ItemDescription", "last", "/desc/types/SparkPlug", root)
    desc_id = kernel.directory.lookup("/desc/types/SparkPlug")
    kernel.execute_transition(desc_id, "Edit", "Start", root)
    kernel.execute_transition(desc_id, "Edit", "Complete", root, outcome=plug_v0)

    _, p123 = kernel.instantiate("SparkPlug", 0, "plug-123", root)
    creation_copy = kernel.store.get_fragment(
        FragmentPath(p123, "Workflow", "layout"))

    kernel.execute_transition(desc_id, "Edit", "Start", root)
    kernel.execute_transition(desc_id, "Edit", "Complete", root, outcome=plug_v1)
    _, p124 = kernel.instantiate("SparkPlug", 1, "plug-124", root)

    for item_id in (p123, p124):
        kernel.execute_transition(item_id, "Measure", "Start", root)
        kernel.execute_transition(item_id, "Measure", "Complete", root,
                                  outcome=measurement(12))
        kernel.execute_transition(item_id, "Mount", "Start", root)
        kernel.execute_transition(item_id, "Mount", "Complete", root)
        assert kernel.load_item(item_id).workflow.terminal_reached

    assert kernel.load_item(p123).property_value("Status") == "boxed"
    assert kernel.load_item(p124).property_value("Status") == "improved"
    live_structure = xmlio.canonical_bytes(
        serialize_structure(kernel.load_item(p123).workflow))
    assert live_structure == creation_copy  # bit-identical
    report("version-coexistence")


def test_self_description_uniformity(file_kernel):
    """A new type authored purely over the wire API, then instantiated and
    executed, with the item-core invariant suite green on the instance."""
    kernel = file_kernel
    httpd = serve(kernel, port=0)
    threading.Thread(target=httpd.serve_forever, daemon=True).start()
    try:
        client = Client(f"http://127.0.0.1:{httpd.server_address[1]}")
        client.login("root", "root")
        schema = ('<?xml version="1.0" encoding="UTF-8"?>\n'
                  '<xs:schema xmlns:xs="http://www.w3.org/2001/XMLSchema">'
                  '<xs:element name="weighing"><xs:complexType><xs:sequence>'
                  '<xs:element name="grams" type="xs:decimal"/>'
                  '</xs:sequence></xs:complexType></xs:element></xs:schema>')
        client.instantiate("OutcomeDescription", "/desc/schemas/Weighing")
        client.execute("/desc/schemas/Weighing", "Edit", "Start")
        client.execute("/desc/schemas/Weighing", "Edit", "Complete", outcome=schema)
        client.instantiate("ElementaryActivityDescription", "/desc/activities/Weigh")
        client.execute("/desc/activities/Weigh", "Edit", "Start")
        client.execute("/desc/activities/Weigh", "Edit", "Complete", outcome=(
            '<elementary-activity-def name="Weigh">'
            '<outcome-schema name="Weighing" version="last"/>'
            '</elementary-activity-def>'))
        client.instantiate("CompositeActivityDescription", "/desc/composites/ScaleLife")
        client.execute("/desc/composites/ScaleLife", "Edit", "Start")
        client.execute("/desc/composites/ScaleLife", "Edit", "Complete", outcome=(
            '<composite-activity-def name="ScaleLife">'
            '<vertex kind="start" name="start"/>'
            '<vertex kind="activity" name="Weigh" ref="Weigh" version="last"/>'
            '<vertex kind="terminal" name="end"/>'
            '<edge from="start" to="Weigh"/><edge from="Weigh" to="end"/>'
            '</composite-activity-def>'))
        client.instantiate("ItemDescription", "/desc/types/Scale")
        client.execute("/desc/types/Scale", "Edit", "Start")
        client.execute("/desc/types/Scale", "Edit", "Complete", outcome=(
            '<item-description type-name="Scale">'
            '<workflow ref="ScaleLife" version="last"/>'
            '</item-description>'))
        created = client.instantiate("Scale", "/lab/scale-1")
        item_id = created["item_id"]
        client.execute(item_id, "Weigh", "Start")
        client.execute(item_id, "Weigh", "Complete",
                       outcome="<weighing><grams>7.25</grams></weighing>")

        # item-core invariant suite on the working instance
        item = kernel.load_item(item_id)
        assert item.type_name == "Scale"
        assert [e.id for e in item.history] == [0, 1]
        assert item.workflow.terminal_reached
        bearing = [e.id for e in item.history if e.outcome_ref is not None]
        assert item.viewpoints[("Weighing", "last")].event_id == max(bearing)
        assert not item.properties["Name"].mutable
        assert not item.properties["Type"].mutable
        replayed = replay_history(kernel.store, kernel.directory, item_id)
        assert item_digest(replayed) == item_digest(item)
    finally:
        httpd.shutdown()
    report("self-description-uniformity")


# --- the heavy criteria -------------------------------------------------------------


def test_scaled_assembly_workload():
    """10,000+ items over five containment levels, full workflows with
    outcomes via the wire API, replay equality, density, wall-clock budget."""
    tmp = tempfile.mkdtemp(prefix="itemflow-workload-")
    store = FileStore(os.path.join(tmp, "store"), fsync=True)
    kernel = Kernel(store)
    bootstrap(store, kernel=kernel)
    httpd = serve(kernel, port=0)
    threading.Thread(target=httpd.serve_forever, daemon=True).start()
    try:
        started = time.monotonic()
        result = run_workload(f"http://127.0.0.1:{httpd.server_address[1]}",
                              supermodules=10, modules=10, subs=10, crystals=9,
                              workers=12)
        elapsed = time.monotonic() - started
        assert result["items"] >= 10_000

        # (a) replay_history equals live state for 100 sampled items
        rng = random.Random(4)
        sample = rng.sample(sorted(result["ids"].values()), 100)
        for item_id in sample:
            live = kernel.load_item(item_id)
            replayed = replay_history(store, kernel.directory, item_id)
            assert item_digest(replayed) == item_digest(live), item_id

        # (b) event-id density for all items
        for _, item_id in kernel.directory.prefix("/assembly/"):
            prefix = f"{item_id}/History/"
            ids = sorted(int(p[len(prefix):])
                         for p in store.list_fragments(prefix))
            assert ids == list(range(len(ids))), item_id

        # (c) wall time under the budget
        assert elapsed < WORKLOAD_BUDGET_SECONDS, f"workload took {elapsed:.0f}s"
        print(f"\n  workload: {result['items']} items in {elapsed:.0f}s")
    finally:
        httpd.shutdown()
    report("scaled-ecal-workload")


def test_crash_recovery():
    """20 random kills during a live workload; every acknowledged write
    survives restart and every touched item replays cleanly."""
    tmp = tempfile.mkdtemp(prefix="itemflow-crash-")
    result = run_crash_cycles(tmp, cycles=20, workers=4,
                              log=lambda line: print(f"  {line}"))
    assert result["kills"] == 20
    assert result["items_acked"] > 100
    report("crash-recovery")
