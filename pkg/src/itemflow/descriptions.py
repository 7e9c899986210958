"""Description resolution and copy-on-instantiate.

Descriptions are ordinary items living under ``/desc/...``; their payload
documents are versioned outcomes (view numerals are the version numbers).
Kinds and their conventions:

  kind        directory prefix     item type                      payload schema
  item-type   /desc/types/         ItemDescription                ItemDescription
  composite   /desc/composites/    CompositeActivityDescription   CompositeActivityDef
  elementary  /desc/activities/    ElementaryActivityDescription  ElementaryActivityDef
  schema      /desc/schemas/       OutcomeDescription             Schema
  script      /desc/scripts/       ScriptDescription              Script
  collection  /desc/collections/   CollectionDescription          CollectionLayout

``resolve_description`` produces an immutable snapshot with every "last"
selector pinned to a concrete numeral and the workflow/collection layouts
fully materialized, so instances never depend on later description edits.
Scripts and schemas stay (name, version) references, loaded at use.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Protocol

from . import xmlio
from .errors import (
    DanglingChildReference,
    GraphDefect,
    InvalidDescription,
    InvalidSnapshot,
    MalformedSchema,
    NoSuchDescription,
    NoSuchVersion,
    NotFound,
)
from .items import PROP_NAME, PROP_TYPE, Collection, Item, Property, Slot
from .schema import parse_schema, validate_document
from .storage import Directory, FragmentStore, outcome_events_for_schema, read_outcome_by_numeral
from .workflow import (
    Edge,
    ScriptRef,
    Vertex,
    WorkflowGraph,
)

VersionSelector = int | str  # an integer numeral or "last"

# kind -> (directory prefix, item type name, payload schema name)
KINDS: dict[str, tuple[str, str, str]] = {
    "item-type": ("/desc/types/", "ItemDescription", "ItemDescription"),
    "composite": ("/desc/composites/", "CompositeActivityDescription", "CompositeActivityDef"),
    "elementary": ("/desc/activities/", "ElementaryActivityDescription", "ElementaryActivityDef"),
    "schema": ("/desc/schemas/", "OutcomeDescription", "Schema"),
    "script": ("/desc/scripts/", "ScriptDescription", "Script"),
    "collection": ("/desc/collections/", "CollectionDescription", "CollectionLayout"),
}

DESC_ROOT = "/desc"


def kind_for_type(type_name: str) -> str | None:
    for kind, (_, item_type, _) in KINDS.items():
        if item_type == type_name:
            return kind
    return None


@dataclass(frozen=True)
class PropertyTemplate:
    name: str
    default: str = ""
    mutable: bool = True


@dataclass(frozen=True)
class SlotTemplate:
    constraints: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class CollectionLayout:
    name: str
    slots: tuple[SlotTemplate, ...]


@dataclass(frozen=True)
class CollectionRef:
    name: str          # collection name on the instance
    layout: str        # collection description name
    version: int       # pinned layout version


@dataclass
class DescriptionSnapshot:
    type_name: str
    version: int
    property_templates: list[PropertyTemplate]
    identifying: list[str]
    workflow_ref: tuple[str, int]
    workflow: WorkflowGraph           # pristine, fully expanded
    collection_refs: list[CollectionRef]
    collections: list[tuple[str, CollectionLayout]]  # (instance name, layout)
    naming_pattern: str | None = None

    def instance_name(self, name: str) -> str:
        if self.naming_pattern and "{name}" in self.naming_pattern:
            return self.naming_pattern.replace("{name}", name)
        return name


class DescriptionSource(Protocol):
    """Versioned description payload lookup; see DirectorySource."""

    def payload(self, kind: str, name: str, selector: VersionSelector) -> tuple[bytes, int]:
        """Document bytes plus the resolved concrete version numeral."""
        ...


class DirectorySource:
    def __init__(self, store: FragmentStore, directory: Directory):
        self.store = store
        self.directory = directory

    def payload(self, kind: str, name: str, selector: VersionSelector) -> tuple[bytes, int]:
        prefix, _, payload_schema = KINDS[kind]
        try:
            item_id = self.directory.lookup(prefix + name)
        except NotFound:
            raise NoSuchDescription(f"no {kind} description named {name!r}") from None
        entries = outcome_events_for_schema(self.store, item_id, payload_schema)
        if not entries:
            raise NoSuchVersion(f"{kind} description {name!r} has no versions yet")
        version = len(entries) - 1 if selector == "last" else int(selector)
        if version < 0 or version >= len(entries):
            raise NoSuchVersion(f"{kind} description {name!r} has no version {selector!r}")
        try:
            data = read_outcome_by_numeral(self.store, item_id, payload_schema, version)
        except NotFound as exc:
            raise NoSuchVersion(exc.message) from None
        return data, version


class LayeredSource:
    """Committed directory first, then an overlay (bootstrap exchange file)."""

    def __init__(self, primary: DescriptionSource, overlay: DescriptionSource):
        self.primary = primary
        self.overlay = overlay

    def payload(self, kind: str, name: str, selector: VersionSelector) -> tuple[bytes, int]:
        try:
            return self.primary.payload(kind, name, selector)
        except (NoSuchDescription, NoSuchVersion):
            return self.overlay.payload(kind, name, selector)


class CachingSource:
    """Payload cache: concrete versions are immutable, "last" is invalidated
    whenever the kernel commits an edit to the named description."""

    def __init__(self, inner: DescriptionSource):
        self.inner = inner
        self._documents: dict[tuple[str, str, int], bytes] = {}
        self._last: dict[tuple[str, str], int] = {}

    def payload(self, kind: str, name: str, selector: VersionSelector) -> tuple[bytes, int]:
        if selector == "last":
            numeral = self._last.get((kind, name))
            if numeral is None:
                data, numeral = self.inner.payload(kind, name, "last")
                self._last[(kind, name)] = numeral
                self._documents[(kind, name, numeral)] = data
                return data, numeral
            selector = numeral
        numeral = int(selector)
        data = self._documents.get((kind, name, numeral))
        if data is None:
            data, numeral = self.inner.payload(kind, name, numeral)
            self._documents[(kind, name, numeral)] = data
        return data, numeral

    def invalidate(self, kind: str, name: str) -> None:
        self._last.pop((kind, name), None)


# --- document builders / parsers ---------------------------------------------------

def item_description_document(type_name: str,
                              templates: list[PropertyTemplate],
                              workflow_ref: tuple[str, VersionSelector],
                              collection_refs: list[tuple[str, str, VersionSelector]] = (),
                              identifying: list[str] | None = None,
                              naming_pattern: str | None = None) -> ET.Element:
    root = xmlio.elem("item-description", {"type-name": type_name})
    for prop_name in identifying or []:
        xmlio.sub(root, "identifying-property", {"name": prop_name})
    for template in templates:
        xmlio.sub(root, "property-template", {
            "default": template.default,
            "mutable": "true" if template.mutable else "false",
            "name": template.name})
    xmlio.sub(root, "workflow", {"ref": workflow_ref[0], "version": str(workflow_ref[1])})
    for name, layout, version in collection_refs:
        xmlio.sub(root, "collection-ref", {"layout": layout, "name": name,
                                           "version": str(version)})
    if naming_pattern:
        xmlio.sub(root, "naming-pattern", text=naming_pattern)
    return root


def composite_def_document(name: str, vertices: list[dict], edges: list[dict]) -> ET.Element:
    root = xmlio.elem("composite-activity-def", {"name": name})
    for vertex in vertices:
        xmlio.sub(root, "vertex", {k: str(v) for k, v in vertex.items()})
    for edge in edges:
        xmlio.sub(root, "edge", {k: str(v) for k, v in edge.items()})
    return root


def elementary_def_document(name: str, outcome_schema: tuple[str, VersionSelector] | None = None,
                            roles: tuple[str, ...] = (), scripts: list[tuple[str, VersionSelector]] = (),
                            config: dict[str, str] | None = None) -> ET.Element:
    root = xmlio.elem("elementary-activity-def", {"name": name})
    if outcome_schema is not None:
        xmlio.sub(root, "outcome-schema", {"name": outcome_schema[0],
                                           "version": str(outcome_schema[1])})
    for role in roles:
        xmlio.sub(root, "role", text=role)
    for script_name, version in scripts or []:
        xmlio.sub(root, "script", {"name": script_name, "version": str(version)})
    for key in sorted(config or {}):
        xmlio.sub(root, "config", {"name": key, "value": (config or {})[key]})
    return root


def collection_layout_document(name: str,
                               slots: list[tuple[str, VersionSelector]]) -> ET.Element:
    root = xmlio.elem("collection-layout", {"name": name})
    for type_ref, version in slots:
        xmlio.sub(root, "slot", {"type-ref": type_ref, "version": str(version)})
    return root


def agent_details_document(display_name: str, kind: str, roles: tuple[str, ...]) -> ET.Element:
    root = xmlio.elem("agent-details")
    xmlio.sub(root, "display-name", text=display_name)
    xmlio.sub(root, "kind", text=kind)
    xmlio.sub(root, "roles", text=" ".join(roles))
    return root


def _selector(raw: str | None) -> VersionSelector:
    if raw is None or raw == "last":
        return "last"
    return int(raw)


# --- workflow instantiation ----------------------------------------------------------

def _parse_elementary(name: str, data: bytes, source: DescriptionSource) -> Vertex:
    root = xmlio.parse_bytes(data)
    outcome_schema: tuple[str, int] | None = None
    node = root.find("outcome-schema")
    if node is not None:
        schema_name = node.get("name", "")
        schema_version = _resolve_version(source, "schema", schema_name,
                                          _selector(node.get("version")))
        outcome_schema = (schema_name, schema_version)
    roles = tuple(r.text or "" for r in root.findall("role"))
    scripts = []
    for script_node in root.findall("script"):
        script_name = script_node.get("name", "")
        version = _resolve_version(source, "script", script_name,
                                   _selector(script_node.get("version")))
        scripts.append(ScriptRef(script_name, version))
    config = {c.get("name", ""): c.get("value", "") for c in root.findall("config")}
    return Vertex(name=name, kind="activity", outcome_schema=outcome_schema,
                  roles=roles, scripts=tuple(scripts), properties=config)


def _resolve_version(source: DescriptionSource, kind: str, name: str,
                     selector: VersionSelector) -> int:
    try:
        _, version = source.payload(kind, name, selector)
    except (NoSuchDescription, NoSuchVersion) as exc:
        raise DanglingChildReference(
            f"{kind} reference {name!r}@{selector!r}: {exc.message}") from exc
    return version


def instantiate_workflow(source: DescriptionSource, layout: bytes | ET.Element,
                         _stack: tuple[tuple[str, int], ...] = ()) -> WorkflowGraph:
    """Expand a composite layout into a complete, validated graph."""
    root = layout if isinstance(layout, ET.Element) else xmlio.parse_bytes(layout)
    vertices: list[Vertex] = []
    edges: list[Edge] = []
    for node in root:
        if node.tag == "vertex":
            kind = node.get("kind", "").replace("-", "_")
            name = node.get("name", "")
            if kind == "activity":
                ref = node.get("ref", name)
                version = _resolve_version(source, "elementary", ref,
                                           _selector(node.get("version")))
                data, _ = source.payload("elementary", ref, version)
                vertices.append(_parse_elementary(name, data, source))
            elif kind == "composite":
                ref = node.get("ref", name)
                version = _resolve_version(source, "composite", ref,
                                           _selector(node.get("version")))
                if (ref, version) in _stack:
                    raise InvalidDescription(
                        f"cyclic composite reference {ref!r}@{version}")
                child_layout, _ = source.payload("composite", ref, version)
                children = instantiate_workflow(source, child_layout,
                                                _stack + ((ref, version),))
                vertices.append(Vertex(name=name, kind="composite", children=children))
            elif kind in ("xor_split", "loop"):
                script_name = node.get("script", "")
                version = _resolve_version(source, "script", script_name,
                                           _selector(node.get("script-version")))
                vertices.append(Vertex(name=name, kind=kind,
                                       decision=ScriptRef(script_name, version)))
            elif kind in ("start", "terminal", "and_split", "and_join"):
                vertices.append(Vertex(name=name, kind=kind))
            else:
                raise InvalidDescription(f"unknown vertex kind {node.get('kind')!r}")
        elif node.tag == "edge":
            edges.append(Edge(node.get("from", ""), node.get("to", ""), node.get("label")))
    graph = WorkflowGraph(vertices, edges)
    defects = graph.defects()
    if defects:
        raise GraphDefect(defects=defects)
    graph.validate()
    return graph


# --- collections -----------------------------------------------------------------------

def resolve_collection_layout(source: DescriptionSource, layout_name: str,
                              selector: VersionSelector) -> CollectionLayout:
    data, _ = source.payload("collection", layout_name, selector)
    root = xmlio.parse_bytes(data)
    name = root.get("name", layout_name)
    slots: list[SlotTemplate] = []
    for node in root.findall("slot"):
        type_ref = node.get("type-ref", "")
        version = _selector(node.get("version"))
        slots.append(SlotTemplate(constraints=_identifying_constraints(
            source, type_ref, version)))
    return CollectionLayout(name=name, slots=tuple(slots))


def _identifying_constraints(source: DescriptionSource, type_name: str,
                             selector: VersionSelector) -> tuple[tuple[str, str], ...]:
    """Copy the referenced type's identifying properties into slot constraints."""
    try:
        data, _ = source.payload("item-type", type_name, selector)
    except (NoSuchDescription, NoSuchVersion) as exc:
        raise InvalidDescription(
            f"slot references {type_name!r}@{selector!r}, which is not an "
            f"item description: {exc.message}") from exc
    doc = xmlio.parse_bytes(data)
    identifying = [n.get("name", "") for n in doc.findall("identifying-property")]
    if not identifying:
        identifying = [PROP_TYPE]
    templates = {n.get("name", ""): n.get("default", "")
                 for n in doc.findall("property-template")}
    constraints: list[tuple[str, str]] = []
    for prop_name in identifying:
        if prop_name == PROP_TYPE:
            constraints.append((PROP_TYPE, doc.get("type-name", type_name)))
        elif prop_name in templates:
            constraints.append((prop_name, templates[prop_name]))
        else:
            raise InvalidDescription(
                f"identifying property {prop_name!r} of {type_name!r} has no template")
    return tuple(constraints)


def instantiate_collection(layout: CollectionLayout, name: str | None = None) -> Collection:
    """One empty slot per layout member; constraints copied, no back-reference."""
    slots = [Slot(id=i, constraints=template.constraints)
             for i, template in enumerate(layout.slots)]
    return Collection(name=name or layout.name, slots=slots, version=0)


# --- snapshots --------------------------------------------------------------------------

def resolve_description(source: DescriptionSource, type_name: str,
                        selector: VersionSelector = "last") -> DescriptionSnapshot:
    """Fully dereferenced, immutable bundle for instantiation."""
    data, version = source.payload("item-type", type_name, selector)
    doc = xmlio.parse_bytes(data)
    templates = [PropertyTemplate(n.get("name", ""), n.get("default", ""),
                                  n.get("mutable") != "false")
                 for n in doc.findall("property-template")]
    identifying = [n.get("name", "") for n in doc.findall("identifying-property")] or [PROP_TYPE]
    workflow_node = doc.find("workflow")
    if workflow_node is None:
        raise InvalidDescription(f"type {type_name!r} v{version} declares no workflow")
    composite_name = workflow_node.get("ref", "")
    composite_version = _resolve_version(source, "composite", composite_name,
                                         _selector(workflow_node.get("version")))
    layout, _ = source.payload("composite", composite_name, composite_version)
    graph = instantiate_workflow(source, layout)
    collection_refs: list[CollectionRef] = []
    collections: list[tuple[str, CollectionLayout]] = []
    for node in doc.findall("collection-ref"):
        layout_name = node.get("layout", "")
        pinned = _resolve_version(source, "collection", layout_name,
                                  _selector(node.get("version")))
        ref = CollectionRef(name=node.get("name", layout_name), layout=layout_name,
                            version=pinned)
        collection_refs.append(ref)
        collections.append((ref.name, resolve_collection_layout(source, layout_name, pinned)))
    return DescriptionSnapshot(
        type_name=doc.get("type-name", type_name),
        version=version,
        property_templates=templates,
        identifying=identifying,
        workflow_ref=(composite_name, composite_version),
        workflow=graph,
        collection_refs=collection_refs,
        collections=collections,
        naming_pattern=xmlio.child_text(doc, "naming-pattern"),
    )


def instantiate_item(snapshot: DescriptionSnapshot, new_id: str, name: str) -> Item:
    """Deep, independent copy: the Type property is the only link back."""
    for template in snapshot.property_templates:
        if template.name in (PROP_NAME, PROP_TYPE):
            raise InvalidSnapshot(
                f"property template {template.name!r} collides with identity properties")
    item = Item(new_id, name, snapshot.type_name)
    for template in snapshot.property_templates:
        item.properties[template.name] = Property(template.name, template.default,
                                                  mutable=template.mutable)
    item.workflow = snapshot.workflow.clone()
    item.workflow.reset()
    for collection_name, layout in snapshot.collections:
        if collection_name in item.collections:
            raise InvalidSnapshot(f"duplicate collection name {collection_name!r}")
        item.collections[collection_name] = instantiate_collection(layout, collection_name)
    return item


# --- outcome validation -------------------------------------------------------------------

def validate_outcome(schema_document: bytes | str, outcome_document: bytes | str) -> list[str]:
    """Deterministic verdict; violations carry document locations."""
    compiled = parse_schema(schema_document)
    return validate_document(compiled, outcome_document)


def make_outcome_validator(source: DescriptionSource):
    """(schema-name, version, doc) -> violations, resolving schemas by name."""

    def validator(schema_name: str, schema_version: int, document: bytes) -> list[str]:
        try:
            schema_doc, _ = source.payload("schema", schema_name, schema_version)
        except (NoSuchDescription, NoSuchVersion) as exc:
            return [f"schema {schema_name!r} v{schema_version} unavailable: {exc.message}"]
        try:
            return validate_outcome(schema_doc, document)
        except MalformedSchema as exc:
            return [f"schema {schema_name!r} v{schema_version} is malformed: {exc.message}"]

    return validator
