import ast
import json
import os
import subprocess
import sys

import pytest

from conftest import crystal_domain, measurement

from itemflow.bootstrap import bootstrap
from itemflow.errors import InvalidDescription
from itemflow.exchange import (
    export_descriptions,
    import_descriptions,
    parse_exchange,
    serialize_exchange,
)
from itemflow.execution import Kernel
from itemflow.storage import MemoryStore


# --- exchange round trips ----------------------------------------------------------------

def test_exchange_file_codec_round_trip():
    exchange = crystal_domain()
    data = serialize_exchange(exchange)
    parsed = parse_exchange(data)
    assert parsed == exchange
    assert serialize_exchange(parsed) == data


def test_export_import_export_byte_identical(crystal_kernel, root):
    first = serialize_exchange(export_descriptions(crystal_kernel, "Crystal"))

    fresh_store = MemoryStore()
    fresh_kernel = Kernel(fresh_store)
    bootstrap(fresh_store, kernel=fresh_kernel)
    fresh_root = fresh_kernel.directory.lookup("/agents/root")
    import_descriptions(fresh_kernel, parse_exchange(first), fresh_root)
    second = serialize_exchange(export_descriptions(fresh_kernel, "Crystal"))
    assert first == second


def test_reimport_is_identity_on_description_store(crystal_kernel, root):
    before = crystal_kernel.store.list_fragments("")
    report = import_descriptions(crystal_kernel, crystal_domain(), root)
    assert all(entry["versions_added"] == 0 for entry in report)
    assert crystal_kernel.store.list_fragments("") == before


def test_import_conflict_detected(crystal_kernel, root):
    domain = crystal_domain()
    domain.find("schema", "Measurement").versions[0] = b"<xs:schema/>"
    with pytest.raises(InvalidDescription, match="conflicts"):
        import_descriptions(crystal_kernel, domain, root)


def test_export_closure_contains_references(crystal_kernel):
    exchange = export_descriptions(crystal_kernel, "Crystal")
    kinds = {(e.kind, e.name) for e in exchange.entries}
    assert ("item-type", "Crystal") in kinds
    assert ("composite", "CrystalLife") in kinds
    assert ("elementary", "Measure") in kinds
    assert ("schema", "Measurement") in kinds


# --- the spark-plug narrative over the CLI -----------------------------------------------

@pytest.fixture
def served(crystal_kernel, root, http_server):
    client = http_server(crystal_kernel)
    client.login("root", "root")
    return crystal_kernel, client


def run_cli(args, client, extra_env=None):
    env = dict(os.environ)
    env["ITEMFLOW_SERVER"] = client.base_url
    env["ITEMFLOW_TOKEN"] = client.token or ""
    env.update(extra_env or {})
    root_dir = os.path.join(os.path.dirname(__file__), "..")
    env["PYTHONPATH"] = os.path.join(root_dir, "src")
    return subprocess.run([sys.executable, "-m", "itemflow.cli", *args],
                          capture_output=True, text=True, env=env)


def test_cli_history_spark_plug_scenario(served, tmp_path, root):
    kernel, client = served
    kernel.execute_predefined_step(
        root, "WriteProperty",
        b"<write-property><name>Roles</name>"
        b"<value>maintainer admin operator</value></write-property>", root)
    # Define the spark-plug type, instantiate #123 from v0, test and mount it,
    # edit the type, instantiate #124 from v1.
    plug_type = ('<item-description type-name="SparkPlug">'
                 '<property-template default="boxed" mutable="true" name="Status"/>'
                 '<workflow ref="CrystalLife" version="last"/>'
                 '<naming-pattern>/plugs/{name}</naming-pattern>'
                 '</item-description>')
    client.instantiate("ItemDescription", "/desc/types/SparkPlug")
    client.execute("/desc/types/SparkPlug", "Edit", "Start")
    client.execute("/desc/types/SparkPlug", "Edit", "Complete", outcome=plug_type)

    p123 = client.instantiate("SparkPlug", "plug-123", version="0")
    client.execute(p123["item_id"], "Measure", "Start")
    client.execute(p123["item_id"], "Measure", "Complete",
                   outcome=measurement(12).decode())
    client.execute(p123["item_id"], "Mount", "Start")
    client.execute(p123["item_id"], "Mount", "Complete")

    client.execute("/desc/types/SparkPlug", "Edit", "Start")
    client.execute("/desc/types/SparkPlug", "Edit", "Complete",
                   outcome=plug_type.replace("boxed", "improved"))
    p124 = client.instantiate("SparkPlug", "plug-124", version="1")
    assert client.summary(p124["item_id"])["properties"][2]["value"] == "improved"

    result = run_cli(["history", p123["item_id"]], client)
    assert result.returncode == 0
    lines = result.stdout.strip().splitlines()
    assert len(lines) == 4
    assert "Measure" in lines[0] and "Start" in lines[0]
    assert "Measurement v0" in lines[1]
    assert "Mount" in lines[3] and "Complete" in lines[3]

    # The type's own history tells the whole story: defined, #123 created,
    # type edited, #124 created from v1.
    result = run_cli(["--json", "history", "/desc/types/SparkPlug"], client)
    events = json.loads(result.stdout)
    assert [(e["activity"], e["transition"]) for e in events] == [
        ("Edit", "Start"), ("Edit", "Complete"),
        ("predefined/CreateItemFromDescription", "Complete"),
        ("Edit", "Start"), ("Edit", "Complete"),
        ("predefined/CreateItemFromDescription", "Complete"),
    ]


def test_cli_export_import_round_trip(served, tmp_path):
    kernel, client = served
    out1 = tmp_path / "crystal1.xml"
    result = run_cli(["export", "Crystal", str(out1)], client)
    assert result.returncode == 0, result.stderr

    # import into a second, freshly bootstrapped server
    store2 = MemoryStore()
    kernel2 = Kernel(store2)
    bootstrap(store2, kernel=kernel2)
    from itemflow.server import serve
    import threading
    httpd = serve(kernel2, port=0)
    threading.Thread(target=httpd.serve_forever, daemon=True).start()
    try:
        from itemflow.wireclient import Client
        client2 = Client(f"http://127.0.0.1:{httpd.server_address[1]}")
        client2.login("root", "root")
        result = run_cli(["import", str(out1)], client2)
        assert result.returncode == 0, result.stderr
        out2 = tmp_path / "crystal2.xml"
        result = run_cli(["export", "Crystal", str(out2)], client2)
        assert result.returncode == 0
        assert out1.read_bytes() == out2.read_bytes()
    finally:
        httpd.shutdown()


def test_cli_exec_invalid_outcome_nonzero_exit(served, tmp_path):
    kernel, client = served
    created = client.instantiate("Crystal", "bad-outcome")
    item_id = created["item_id"]
    # grant root the operator role for this test
    root_id = kernel.directory.lookup("/agents/root")
    kernel.execute_predefined_step(
        root_id, "WriteProperty",
        b"<write-property><name>Roles</name>"
        b"<value>maintainer admin operator</value></write-property>", root_id)
    run_cli(["exec", item_id, "Measure", "Start"], client)
    bad = tmp_path / "bad.xml"
    bad.write_bytes(measurement(777))
    before = len(client.history(item_id))
    result = run_cli(["exec", item_id, "Measure", "Complete",
                      "--outcome", str(bad)], client)
    assert result.returncode == 1
    assert "SchemaValidationFailed" in result.stderr
    assert len(client.history(item_id)) == before


def test_cli_jobs_and_new_item_machine_output(served):
    kernel, client = served
    result = run_cli(["--json", "new-item", "Crystal", "mo-1"], client)
    assert result.returncode == 0, result.stderr
    payload = json.loads(result.stdout)
    assert payload["name"] == "/ecal/crystals/mo-1"
    result = run_cli(["--json", "items", "--prefix", "/ecal/crystals/mo-"], client)
    entries = json.loads(result.stdout)
    assert [e["name"] for e in entries] == ["/ecal/crystals/mo-1"]
    result = run_cli(["--json", "jobs", "--item", payload["id"]], client)
    assert json.loads(result.stdout) == []  # root lacks the operator role


def test_cli_apply_selector(served):
    kernel, client = served
    ids = [client.instantiate("Crystal", f"ap-{k}")["item_id"] for k in range(3)]
    script_doc = ('<description-exchange>'
                  '<description kind="script" name="MarkChecked">'
                  '<version n="0">'
                  '&lt;script-def language="python" name="MarkChecked"&gt;'
                  '&lt;source&gt;ctx.write_property("Status", "checked")&lt;/source&gt;'
                  '&lt;/script-def&gt;'
                  '</version></description></description-exchange>')
    client.import_descriptions(script_doc.encode())
    result = run_cli(["--json", "apply", "MarkChecked", "/ecal/crystals/ap-"], client)
    assert result.returncode == 0, result.stderr
    report = json.loads(result.stdout)
    assert len(report) == 3
    assert all(entry["status"] == "ok" for entry in report)
    for item_id in ids:
        summary = client.summary(item_id)
        status = [p for p in summary["properties"] if p["name"] == "Status"][0]
        assert status["value"] == "checked"


def test_cli_usage_error_exit_code(served):
    kernel, client = served
    result = run_cli(["exec"], client)  # missing arguments
    assert result.returncode == 2


def test_cli_machine_output_matches_golden(served, tmp_path):
    # The machine mode's field set is frozen; timestamps/ids are normalized.
    kernel, client = served
    created = client.instantiate("Crystal", "golden-1")
    root_id = kernel.directory.lookup("/agents/root")
    kernel.execute_predefined_step(
        root_id, "WriteProperty",
        b"<write-property><name>Roles</name>"
        b"<value>maintainer admin operator</value></write-property>", root_id)
    client.execute(created["item_id"], "Measure", "Start")
    client.execute(created["item_id"], "Measure", "Complete",
                   outcome=measurement(33).decode())
    result = run_cli(["--json", "history", created["item_id"]], client)
    events = json.loads(result.stdout)
    for event in events:
        event["timestamp"] = "<ts>"
        event["agent"] = "<agent>"
    golden_path = os.path.join(os.path.dirname(__file__), "golden",
                               "history_machine.json")
    with open(golden_path, "r", encoding="utf-8") as fh:
        assert events == json.load(fh)


def test_cli_is_pure_client():
    # Module-level imports of the CLI must stay on the wire-client side;
    # the local serve/bootstrap commands import the kernel lazily.
    import itemflow.cli as cli_module
    source = open(cli_module.__file__).read()
    tree = ast.parse(source)
    top_level = [node for node in tree.body
                 if isinstance(node, (ast.Import, ast.ImportFrom))]
    names = set()
    for node in top_level:
        if isinstance(node, ast.ImportFrom):
            names.add(node.module or "")
        else:
            names.update(alias.name for alias in node.names)
    forbidden = {"itemflow.storage", "itemflow.execution", "itemflow.server",
                 "itemflow.bootstrap", "itemflow.items", "itemflow.workflow"}
    assert not (names & forbidden), names
