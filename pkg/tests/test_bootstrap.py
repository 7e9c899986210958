import pytest

from itemflow import xmlio
from itemflow.bootstrap import (
    bootstrap,
    bootstrap_exchange,
    expected_names,
    hash_credential,
    load_bundled_exchange,
    verify_credential,
)
from itemflow.errors import MalformedSchema, PartialBootstrapDetected
from itemflow.exchange import serialize_exchange
from itemflow.storage import MemoryStore


def test_bootstrap_installs_expected_tree(kernel):
    # The fixture kernel is already bootstrapped; check the /desc tree.
    names = expected_names(load_bundled_exchange())
    for name in names:
        assert kernel.directory.has_name(name), name
    types = kernel.directory.prefix("/desc/types/")
    assert {n.rsplit("/", 1)[1] for n, _ in types} >= {
        "ItemDescription", "CompositeActivityDescription",
        "ElementaryActivityDescription", "OutcomeDescription",
        "ScriptDescription", "CollectionDescription", "Agent"}


def test_bootstrap_idempotent(kernel):
    before = kernel.store.list_fragments("")
    report = bootstrap(kernel.store, kernel=kernel)
    assert report["status"] == "already-present"
    assert report["versions_added"] == 0
    assert kernel.store.list_fragments("") == before  # zero writes


def test_partial_store_detected(kernel):
    # Remove one expected journal entry by rebuilding a partial store.
    partial = MemoryStore()
    source = kernel.store
    victims = {"/desc/types/Agent"}
    keep_ids = set()
    for record in source.read_journal():
        if record.name not in victims:
            keep_ids.add(record.item_id)
            partial._journal.append(record)
    for logical, data in source._data.items():
        if logical.split("/", 1)[0] in keep_ids:
            partial._data[logical] = data
    with pytest.raises(PartialBootstrapDetected):
        bootstrap(partial)


def test_bundled_file_matches_builders():
    assert load_bundled_exchange() == bootstrap_exchange()
    assert serialize_exchange(load_bundled_exchange()) == \
        serialize_exchange(bootstrap_exchange())


def test_closure_every_type_described(kernel):
    # The "described by" loop terminates inside the store.
    for _, item_id in kernel.directory.prefix("/"):
        item = kernel.load_item(item_id)
        type_name = item.type_name
        assert kernel.directory.has_name(f"/desc/types/{type_name}"), \
            f"{item.name} has unresolved type {type_name}"
    meta = kernel.item_by_name("/desc/types/ItemDescription")
    assert meta.type_name == "ItemDescription"


def test_no_description_specific_mutation_entry_points():
    # Uniformity: the kernel exposes exactly one transition executor and one
    # predefined-step executor; description edits go through the same two.
    from itemflow.execution import Kernel as K
    mutators = [name for name in dir(K)
                if name.startswith(("execute_", "apply_", "edit_", "mutate_"))]
    assert sorted(mutators) == ["execute_predefined_step", "execute_transition"]


def test_new_type_via_api_only(kernel, root, http_server):
    # End-to-end: a brand-new type purely via wire API calls, no code changes.
    client = http_server(kernel)
    client.login("root", "root")

    schema = """<?xml version="1.0" encoding="UTF-8"?>
<xs:schema xmlns:xs="http://www.w3.org/2001/XMLSchema">
  <xs:element name="weighing">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="grams" type="xs:decimal"/>
      </xs:sequence>
    </xs:complexType>
  </xs:element>
</xs:schema>
"""
    exchange = xmlio.elem("description-exchange")
    entry = xmlio.sub(exchange, "description", {"kind": "schema", "name": "Weighing"})
    xmlio.sub(entry, "version", {"n": "0"}, text=schema)
    client.import_descriptions(xmlio.canonical_bytes(exchange))

    # Author the rest through ordinary instantiate + Edit transitions.
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
        '<property-template default="lab" mutable="true" name="Location"/>'
        '<workflow ref="ScaleLife" version="last"/>'
        '</item-description>'))

    created = client.instantiate("Scale", "/lab/scale-1")
    item_id = created["item_id"]
    client.execute(item_id, "Weigh", "Start")
    client.execute(item_id, "Weigh", "Complete",
                   outcome="<weighing><grams>12.5</grams></weighing>")
    summary = client.summary(item_id)
    assert summary["type"] == "Scale"
    assert summary["workflow"]["terminal"] is True
    assert summary["history_length"] == 2
    # item-core invariants on the new instance
    item = kernel.load_item(item_id)
    assert [e.id for e in item.history] == [0, 1]
    assert item.viewpoints[("Weighing", "last")].event_id == 1
    assert not item.properties["Name"].mutable


def test_schema_edit_compile_check(kernel, root):
    # The Edit activity on schema descriptions compiles the submitted schema.
    kernel.instantiate("OutcomeDescription", "last", "/desc/schemas/Evil", root)
    evil_id = kernel.directory.lookup("/desc/schemas/Evil")
    kernel.execute_transition(evil_id, "Edit", "Start", root)
    bad_schema = ('<?xml version="1.0"?>'
                  '<xs:schema xmlns:xs="http://www.w3.org/2001/XMLSchema">'
                  '<xs:element name="x" type="xs:nosuchtype"/></xs:schema>')
    with pytest.raises(MalformedSchema):
        kernel.execute_transition(evil_id, "Edit", "Complete", root,
                                  outcome=bad_schema.encode())
    item = kernel.load_item(evil_id)
    assert len(item.history) == 1  # rolled back


def test_credentials_round_trip():
    stored = hash_credential("secret")
    assert verify_credential("secret", stored)
    assert not verify_credential("wrong", stored)
    assert stored != hash_credential("secret")  # fresh salt each time
