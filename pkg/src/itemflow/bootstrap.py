"""First-run installation of the descriptions of Descriptions.

The self-description loop terminates here: ``/desc/types/ItemDescription``
is an item of type ItemDescription (itself), every other description kind
has an item type whose own type is ItemDescription, and every bundled
schema/script/activity is an ordinary versioned item. After bootstrap all
further modeling happens through the normal item machinery; there is no
other mutation entry point.

The content ships as a description exchange file (``data/bootstrap.xml``,
regenerated by ``scripts/gen_bootstrap.py``) so it is inspectable and
importable like any other description set. Bootstrapping an empty store
imports it and creates the root maintainer agent; bootstrapping a complete
store verifies and writes nothing; anything in between raises
PartialBootstrapDetected.
"""

from __future__ import annotations

import hashlib
import secrets
from importlib import resources

from . import xmlio
from .descriptions import (
    KINDS,
    PropertyTemplate,
    composite_def_document,
    elementary_def_document,
    item_description_document,
)
from .errors import PartialBootstrapDetected
from .exchange import ExchangeFile, ExchangeSource, import_descriptions, parse_exchange, serialize_exchange
from .execution import Kernel, PREDEFINED_STEPS, Transaction
from .scripting import ScriptDefinition, script_definition_document
from .storage import FragmentStore

ROOT_AGENT_NAME = "/agents/root"
DEFAULT_ROOT_SECRET = "root"

_XS = "http://www.w3.org/2001/XMLSchema"

# --- credential hashing (shared with the server's login) ---------------------------

def hash_credential(secret: str, salt: str | None = None) -> str:
    salt = salt or secrets.token_hex(8)
    digest = hashlib.sha256((salt + secret).encode("utf-8")).hexdigest()
    return f"{salt}${digest}"


def verify_credential(secret: str, stored: str) -> bool:
    salt, _, _digest = stored.partition("$")
    return secrets.compare_digest(hash_credential(secret, salt), stored)


# --- bundled schema documents -------------------------------------------------------

def _schema(body: str) -> bytes:
    return (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<xs:schema xmlns:xs="{_XS}">\n{body}</xs:schema>\n').encode("utf-8")


SCHEMA_DOCUMENTS: dict[str, bytes] = {
    "ItemDescription": _schema("""\
  <xs:element name="item-description">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="identifying-property" minOccurs="0" maxOccurs="unbounded">
          <xs:complexType>
            <xs:attribute name="name" use="required"/>
          </xs:complexType>
        </xs:element>
        <xs:element name="property-template" minOccurs="0" maxOccurs="unbounded">
          <xs:complexType>
            <xs:attribute name="default"/>
            <xs:attribute name="mutable"/>
            <xs:attribute name="name" use="required"/>
          </xs:complexType>
        </xs:element>
        <xs:element name="workflow">
          <xs:complexType>
            <xs:attribute name="ref" use="required"/>
            <xs:attribute name="version"/>
          </xs:complexType>
        </xs:element>
        <xs:element name="collection-ref" minOccurs="0" maxOccurs="unbounded">
          <xs:complexType>
            <xs:attribute name="layout" use="required"/>
            <xs:attribute name="name"/>
            <xs:attribute name="version"/>
          </xs:complexType>
        </xs:element>
        <xs:element name="naming-pattern" type="xs:string" minOccurs="0"/>
      </xs:sequence>
      <xs:attribute name="type-name" use="required"/>
    </xs:complexType>
  </xs:element>
"""),
    "CompositeActivityDef": _schema("""\
  <xs:element name="composite-activity-def">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="vertex" minOccurs="0" maxOccurs="unbounded">
          <xs:complexType>
            <xs:attribute name="kind" use="required">
              <xs:simpleType>
                <xs:restriction base="xs:string">
                  <xs:enumeration value="start"/>
                  <xs:enumeration value="terminal"/>
                  <xs:enumeration value="activity"/>
                  <xs:enumeration value="composite"/>
                  <xs:enumeration value="and-split"/>
                  <xs:enumeration value="and-join"/>
                  <xs:enumeration value="xor-split"/>
                  <xs:enumeration value="loop"/>
                </xs:restriction>
              </xs:simpleType>
            </xs:attribute>
            <xs:attribute name="name" use="required"/>
            <xs:attribute name="ref"/>
            <xs:attribute name="script"/>
            <xs:attribute name="script-version"/>
            <xs:attribute name="version"/>
          </xs:complexType>
        </xs:element>
        <xs:element name="edge" minOccurs="0" maxOccurs="unbounded">
          <xs:complexType>
            <xs:attribute name="from" use="required"/>
            <xs:attribute name="label"/>
            <xs:attribute name="to" use="required"/>
          </xs:complexType>
        </xs:element>
      </xs:sequence>
      <xs:attribute name="name" use="required"/>
    </xs:complexType>
  </xs:element>
"""),
    "ElementaryActivityDef": _schema("""\
  <xs:element name="elementary-activity-def">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="outcome-schema" minOccurs="0">
          <xs:complexType>
            <xs:attribute name="name" use="required"/>
            <xs:attribute name="version"/>
          </xs:complexType>
        </xs:element>
        <xs:element name="role" type="xs:string" minOccurs="0" maxOccurs="unbounded"/>
        <xs:element name="script" minOccurs="0" maxOccurs="unbounded">
          <xs:complexType>
            <xs:attribute name="name" use="required"/>
            <xs:attribute name="version"/>
          </xs:complexType>
        </xs:element>
        <xs:element name="config" minOccurs="0" maxOccurs="unbounded">
          <xs:complexType>
            <xs:attribute name="name" use="required"/>
            <xs:attribute name="value"/>
          </xs:complexType>
        </xs:element>
      </xs:sequence>
      <xs:attribute name="name" use="required"/>
    </xs:complexType>
  </xs:element>
"""),
    "Script": _schema("""\
  <xs:element name="script-def">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="input" minOccurs="0" maxOccurs="unbounded">
          <xs:complexType>
            <xs:attribute name="name" use="required"/>
            <xs:attribute name="type" use="required"/>
          </xs:complexType>
        </xs:element>
        <xs:element name="output" minOccurs="0">
          <xs:complexType>
            <xs:attribute name="type"/>
          </xs:complexType>
        </xs:element>
        <xs:element name="source" type="xs:string"/>
      </xs:sequence>
      <xs:attribute name="language" use="required"/>
      <xs:attribute name="name"/>
    </xs:complexType>
  </xs:element>
"""),
    # Schema documents validate shallowly against this and are compiled by the
    # CompileSchema activity script, which rejects anything malformed.
    "Schema": _schema("""\
  <xs:element name="schema">
    <xs:complexType>
      <xs:sequence>
        <xs:any minOccurs="0" maxOccurs="unbounded"/>
      </xs:sequence>
      <xs:attribute name="elementFormDefault"/>
      <xs:attribute name="targetNamespace"/>
      <xs:attribute name="version"/>
    </xs:complexType>
  </xs:element>
"""),
    "CollectionLayout": _schema("""\
  <xs:element name="collection-layout">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="slot" minOccurs="0" maxOccurs="unbounded">
          <xs:complexType>
            <xs:attribute name="type-ref" use="required"/>
            <xs:attribute name="version"/>
          </xs:complexType>
        </xs:element>
      </xs:sequence>
      <xs:attribute name="name" use="required"/>
    </xs:complexType>
  </xs:element>
"""),
    "AgentDetails": _schema("""\
  <xs:element name="agent-details">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="display-name" type="xs:string"/>
        <xs:element name="kind">
          <xs:simpleType>
            <xs:restriction base="xs:string">
              <xs:enumeration value="human"/>
              <xs:enumeration value="computational"/>
            </xs:restriction>
          </xs:simpleType>
        </xs:element>
        <xs:element name="roles" type="xs:string"/>
      </xs:sequence>
    </xs:complexType>
  </xs:element>
"""),
    "PredefWriteProperty": _schema("""\
  <xs:element name="write-property">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="name" type="xs:string"/>
        <xs:element name="value" type="xs:string"/>
        <xs:element name="mutable" minOccurs="0">
          <xs:simpleType>
            <xs:restriction base="xs:string">
              <xs:enumeration value="true"/>
              <xs:enumeration value="false"/>
            </xs:restriction>
          </xs:simpleType>
        </xs:element>
      </xs:sequence>
    </xs:complexType>
  </xs:element>
"""),
    "PredefAddMember": _schema("""\
  <xs:element name="add-member">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="collection" type="xs:string"/>
        <xs:element name="slot" type="xs:integer"/>
        <xs:element name="target" type="xs:string"/>
      </xs:sequence>
    </xs:complexType>
  </xs:element>
"""),
    "PredefRemoveMember": _schema("""\
  <xs:element name="remove-member">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="collection" type="xs:string"/>
        <xs:element name="slot" type="xs:integer"/>
      </xs:sequence>
    </xs:complexType>
  </xs:element>
"""),
    "PredefCreateItem": _schema("""\
  <xs:element name="create-item">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="name" type="xs:string"/>
        <xs:element name="version" type="xs:string" minOccurs="0"/>
        <xs:element name="property" minOccurs="0" maxOccurs="unbounded">
          <xs:complexType>
            <xs:attribute name="name" use="required"/>
            <xs:attribute name="value"/>
          </xs:complexType>
        </xs:element>
      </xs:sequence>
    </xs:complexType>
  </xs:element>
"""),
    "PredefWriteViewpoint": _schema("""\
  <xs:element name="write-viewpoint">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="schema" type="xs:string"/>
        <xs:element name="view" type="xs:string"/>
        <xs:element name="event" type="xs:integer"/>
      </xs:sequence>
    </xs:complexType>
  </xs:element>
"""),
}

assert set(PREDEFINED_STEPS.values()) <= set(SCHEMA_DOCUMENTS)

# (kind suffix, payload schema) for each description kind's edit lifecycle
_EDIT_TABLE = [
    ("ItemType", "ItemDescription", "ItemDescription"),
    ("Composite", "CompositeActivityDef", "CompositeActivityDescription"),
    ("Elementary", "ElementaryActivityDef", "ElementaryActivityDescription"),
    ("Schema", "Schema", "OutcomeDescription"),
    ("Script", "Script", "ScriptDescription"),
    ("Collection", "CollectionLayout", "CollectionDescription"),
    ("Agent", "AgentDetails", "Agent"),
]


def bootstrap_exchange() -> ExchangeFile:
    """The full bootstrap description set, built deterministically."""
    exchange = ExchangeFile()
    for name in sorted(SCHEMA_DOCUMENTS):
        exchange.add("schema", name, [SCHEMA_DOCUMENTS[name]])

    exchange.add("script", "LoopForever", [xmlio.canonical_bytes(
        script_definition_document(ScriptDefinition(
            name="LoopForever", version=0, language_tag="expr", source="true",
            output="label")))])
    exchange.add("script", "CompileSchema", [xmlio.canonical_bytes(
        script_definition_document(ScriptDefinition(
            name="CompileSchema", version=0, language_tag="kernel",
            source="compile-schema", inputs=(("document", "document"),))))])

    for suffix, payload_schema, _type in _EDIT_TABLE:
        scripts = [("CompileSchema", 0)] if payload_schema == "Schema" else []
        exchange.add("elementary", f"Edit{suffix}", [xmlio.canonical_bytes(
            elementary_def_document(
                f"Edit{suffix}", outcome_schema=(payload_schema, 0),
                roles=("maintainer",), scripts=scripts))])

    for suffix, _payload_schema, _type in _EDIT_TABLE:
        exchange.add("composite", f"Manage{suffix}", [xmlio.canonical_bytes(
            composite_def_document(
                f"Manage{suffix}",
                vertices=[
                    {"kind": "start", "name": "start"},
                    {"kind": "loop", "name": "Again", "script": "LoopForever",
                     "script-version": "0"},
                    {"kind": "activity", "name": "Edit", "ref": f"Edit{suffix}",
                     "version": "0"},
                    {"kind": "terminal", "name": "end"},
                ],
                edges=[
                    {"from": "start", "to": "Again"},
                    {"from": "Again", "label": "true", "to": "Edit"},
                    {"from": "Edit", "to": "Again"},
                    {"from": "Again", "label": "false", "to": "end"},
                ]))])

    for suffix, _payload_schema, type_name in _EDIT_TABLE:
        templates: list[PropertyTemplate] = []
        if type_name == "Agent":
            templates = [
                PropertyTemplate("CredentialHash", "", True),
                PropertyTemplate("DisplayName", "", True),
                PropertyTemplate("Kind", "human", True),
                PropertyTemplate("Roles", "", True),
            ]
        exchange.add("item-type", type_name, [xmlio.canonical_bytes(
            item_description_document(
                type_name, templates, workflow_ref=(f"Manage{suffix}", 0)))])
    return exchange


def load_bundled_exchange() -> ExchangeFile:
    data = resources.files("itemflow").joinpath("data/bootstrap.xml").read_bytes()
    return parse_exchange(data)


def expected_names(exchange: ExchangeFile) -> list[str]:
    names = [KINDS[entry.kind][0] + entry.name for entry in exchange.entries]
    names.append(ROOT_AGENT_NAME)
    return names


def bootstrap(store: FragmentStore, root_secret: str = DEFAULT_ROOT_SECRET,
              kernel: Kernel | None = None) -> dict[str, object]:
    """Install the meta-meta layer; idempotent on a complete store."""
    kernel = kernel or Kernel(store)
    exchange = load_bundled_exchange()
    names = expected_names(exchange)
    present = [name for name in names if kernel.directory.has_name(name)]
    if present and len(present) < len(names):
        missing = sorted(set(names) - set(present))
        raise PartialBootstrapDetected(
            f"store holds {len(present)} of {len(names)} bootstrap items; "
            f"missing e.g. {missing[:3]}")

    kernel.overlay = ExchangeSource(exchange)
    try:
        if not kernel.directory.has_name(ROOT_AGENT_NAME):
            txn = Transaction(kernel)
            try:
                kernel.create_instance(txn, "Agent", "last", ROOT_AGENT_NAME,
                                       initial_properties={
                                           "CredentialHash": hash_credential(root_secret),
                                           "DisplayName": "root",
                                           "Kind": "human",
                                           "Roles": "maintainer admin",
                                       })
                txn.commit()
            except BaseException:
                txn.abort()
                raise
        root_id = kernel.directory.lookup(ROOT_AGENT_NAME)
        report = import_descriptions(kernel, exchange, root_id)
    finally:
        kernel.overlay = None

    installed = [entry for entry in report if entry["created"]]
    return {
        "status": "installed" if installed else "already-present",
        "items": len(names),
        "installed": len(installed) + (0 if present else 1),
        "versions_added": sum(int(e["versions_added"]) for e in report),
        "root_agent": ROOT_AGENT_NAME,
        "descriptions": report,
    }


def write_bundled_exchange(path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_exchange(bootstrap_exchange()))
