import copy
import threading

import pytest

from itemflow import xmlio
from itemflow.bootstrap import bootstrap
from itemflow.descriptions import (
    PropertyTemplate,
    composite_def_document,
    elementary_def_document,
    item_description_document,
)
from itemflow.exchange import ExchangeFile, import_descriptions
from itemflow.execution import Kernel
from itemflow.storage import MemoryStore

MEASUREMENT_SCHEMA = b'''<?xml version="1.0" encoding="UTF-8"?>
<xs:schema xmlns:xs="http://www.w3.org/2001/XMLSchema">
  <xs:element name="measurement">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="value">
          <xs:simpleType>
            <xs:restriction base="xs:decimal">
              <xs:minInclusive value="0"/>
              <xs:maxInclusive value="100"/>
            </xs:restriction>
          </xs:simpleType>
        </xs:element>
        <xs:element name="note" type="xs:string" minOccurs="0"/>
      </xs:sequence>
    </xs:complexType>
  </xs:element>
</xs:schema>
'''


def measurement(value, note=None) -> bytes:
    doc = xmlio.elem("measurement")
    xmlio.sub(doc, "value", text=str(value))
    if note is not None:
        xmlio.sub(doc, "note", text=note)
    return xmlio.canonical_bytes(doc)


def crystal_domain() -> ExchangeFile:
    """A small measurable item type used across the suite."""
    domain = ExchangeFile()
    domain.add("schema", "Measurement", [MEASUREMENT_SCHEMA])
    domain.add("elementary", "Measure", [xmlio.canonical_bytes(elementary_def_document(
        "Measure", outcome_schema=("Measurement", "last"), roles=("operator",)))])
    domain.add("elementary", "Mount", [xmlio.canonical_bytes(
        elementary_def_document("Mount", roles=("operator",)))])
    domain.add("composite", "CrystalLife", [xmlio.canonical_bytes(composite_def_document(
        "CrystalLife",
        vertices=[
            {"kind": "start", "name": "start"},
            {"kind": "activity", "name": "Measure", "ref": "Measure", "version": "last"},
            {"kind": "activity", "name": "Mount", "ref": "Mount", "version": "last"},
            {"kind": "terminal", "name": "end"},
        ],
        edges=[
            {"from": "start", "to": "Measure"},
            {"from": "Measure", "to": "Mount"},
            {"from": "Mount", "to": "end"},
        ]))])
    domain.add("item-type", "Crystal", [xmlio.canonical_bytes(item_description_document(
        "Crystal", [PropertyTemplate("Status", "new", True)],
        workflow_ref=("CrystalLife", "last"),
        naming_pattern="/ecal/crystals/{name}"))])
    return domain


_BASE_STORE = None


def _base_store() -> MemoryStore:
    global _BASE_STORE
    if _BASE_STORE is None:
        store = MemoryStore()
        bootstrap(store)
        _BASE_STORE = store
    return _BASE_STORE


@pytest.fixture
def kernel() -> Kernel:
    """A freshly bootstrapped kernel on a copied in-memory store."""
    store = copy.deepcopy(_base_store())
    return Kernel(store)


@pytest.fixture
def root(kernel: Kernel) -> str:
    return kernel.directory.lookup("/agents/root")


@pytest.fixture
def operator(kernel: Kernel, root: str) -> str:
    _, agent_id = kernel.instantiate("Agent", "last", "/agents/op", root,
                                     initial_properties={"Roles": "operator"})
    return agent_id


@pytest.fixture
def crystal_kernel(kernel: Kernel, root: str) -> Kernel:
    import_descriptions(kernel, crystal_domain(), root)
    return kernel


@pytest.fixture
def http_server():
    """Factory: spin up a server over a kernel, yield (client factory, base url)."""
    from itemflow.server import serve
    from itemflow.wireclient import Client

    servers = []

    def start(kernel: Kernel):
        httpd = serve(kernel, port=0)
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        servers.append(httpd)
        return Client(f"http://127.0.0.1:{httpd.server_address[1]}")

    yield start
    for httpd in servers:
        httpd.shutdown()
