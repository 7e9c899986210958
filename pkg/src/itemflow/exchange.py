"""Description exchange files: the import/export unit for description sets.

One file carries any number of descriptions, each with its full version
history (version numerals must stay dense, so partial histories are not
exchanged). Payload documents are embedded verbatim as element text and
come back out byte-identical on export.

Imports are idempotent: versions already present are verified against the
file (a content mismatch aborts with InvalidDescription), missing ones
are appended by executing the description item's own Edit activity, so
imports leave the same provenance as interactive edits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import xmlio
from .descriptions import KINDS, VersionSelector
from .errors import InvalidDescription, NoSuchDescription, NoSuchVersion
from .execution import Kernel, Transaction
from .storage import outcome_events_for_schema, read_outcome_by_numeral

KIND_ORDER = ("schema", "script", "elementary", "composite", "collection", "item-type")

EDIT_ACTIVITY = "Edit"


@dataclass
class ExchangeEntry:
    kind: str
    name: str
    versions: list[bytes] = field(default_factory=list)


@dataclass
class ExchangeFile:
    entries: list[ExchangeEntry] = field(default_factory=list)

    def find(self, kind: str, name: str) -> ExchangeEntry | None:
        for entry in self.entries:
            if entry.kind == kind and entry.name == name:
                return entry
        return None

    def add(self, kind: str, name: str, versions: list[bytes]) -> None:
        self.entries.append(ExchangeEntry(kind, name, versions))


def serialize_exchange(exchange: ExchangeFile) -> bytes:
    root = xmlio.elem("description-exchange")
    for entry in exchange.entries:
        node = xmlio.sub(root, "description", {"kind": entry.kind, "name": entry.name})
        for index, document in enumerate(entry.versions):
            xmlio.sub(node, "version", {"n": str(index)},
                      text=document.decode("utf-8"))
    return xmlio.canonical_bytes(root)


def parse_exchange(data: bytes | str) -> ExchangeFile:
    root = xmlio.parse_bytes(data)
    if root.tag != "description-exchange":
        raise InvalidDescription(f"not an exchange file (root <{root.tag}>)")
    exchange = ExchangeFile()
    for node in root.findall("description"):
        kind = node.get("kind", "")
        if kind not in KINDS:
            raise InvalidDescription(f"unknown description kind {kind!r}")
        versions: list[tuple[int, bytes]] = []
        for vnode in node.findall("version"):
            versions.append((int(vnode.get("n", "0")), (vnode.text or "").encode("utf-8")))
        versions.sort()
        for expected, (numeral, _) in enumerate(versions):
            if numeral != expected:
                raise InvalidDescription(
                    f"{kind} {node.get('name')!r}: version numerals must be dense")
        exchange.add(kind, node.get("name", ""), [doc for _, doc in versions])
    return exchange


class ExchangeSource:
    """DescriptionSource over a parsed exchange file (bootstrap overlay)."""

    def __init__(self, exchange: ExchangeFile):
        self.exchange = exchange

    def payload(self, kind: str, name: str, selector: VersionSelector) -> tuple[bytes, int]:
        entry = self.exchange.find(kind, name)
        if entry is None or not entry.versions:
            raise NoSuchDescription(f"exchange file has no {kind} named {name!r}")
        version = len(entry.versions) - 1 if selector == "last" else int(selector)
        if version < 0 or version >= len(entry.versions):
            raise NoSuchVersion(f"exchange {kind} {name!r} has no version {selector!r}")
        return entry.versions[version], version


# --- import -----------------------------------------------------------------------

def import_descriptions(kernel: Kernel, exchange: ExchangeFile,
                        agent_id: str) -> list[dict[str, object]]:
    """Create missing description items and append missing versions."""
    kernel.require_maintainer(agent_id)
    report: list[dict[str, object]] = []
    for kind in KIND_ORDER:
        for entry in [e for e in exchange.entries if e.kind == kind]:
            report.append(_import_entry(kernel, entry, agent_id))
    return report


def _import_entry(kernel: Kernel, entry: ExchangeEntry,
                  agent_id: str) -> dict[str, object]:
    prefix, item_type, payload_schema = KINDS[entry.kind]
    full_name = prefix + entry.name
    created = False
    if not kernel.directory.has_name(full_name):
        txn = Transaction(kernel)
        try:
            kernel.create_instance(txn, item_type, "last", full_name)
            txn.commit()
            created = True
        except BaseException:
            txn.abort()
            raise
    item_id = kernel.directory.lookup(full_name)
    existing = len(outcome_events_for_schema(kernel.store, item_id, payload_schema))
    for numeral, document in enumerate(entry.versions):
        if numeral < existing:
            stored = read_outcome_by_numeral(kernel.store, item_id,
                                             payload_schema, numeral)
            if stored != document:
                raise InvalidDescription(
                    f"{entry.kind} {entry.name!r} v{numeral} conflicts with the "
                    f"already-stored version")
            continue
        kernel.execute_transition(item_id, EDIT_ACTIVITY, "Start", agent_id)
        kernel.execute_transition(item_id, EDIT_ACTIVITY, "Complete", agent_id,
                                  outcome=document)
    added = max(0, len(entry.versions) - existing)
    return {"kind": entry.kind, "name": entry.name, "created": created,
            "versions_added": added, "versions_present": max(existing, len(entry.versions))}


# --- export -----------------------------------------------------------------------

_REF_ATTRS = {
    "item-type": (("workflow", "composite", "ref"), ("collection-ref", "collection", "layout")),
    "composite": (("vertex", None, None),),
    "elementary": (("outcome-schema", "schema", "name"), ("script", "script", "name")),
    "collection": (("slot", "item-type", "type-ref"),),
    "schema": (),
    "script": (),
}


def _refs_in(kind: str, document: bytes) -> list[tuple[str, str]]:
    root = xmlio.parse_bytes(document)
    refs: list[tuple[str, str]] = []
    if kind == "composite":
        for node in root.findall("vertex"):
            vkind = node.get("kind", "")
            if vkind == "activity":
                refs.append(("elementary", node.get("ref", node.get("name", ""))))
            elif vkind == "composite":
                refs.append(("composite", node.get("ref", node.get("name", ""))))
            elif vkind in ("xor-split", "loop"):
                refs.append(("script", node.get("script", "")))
        return refs
    for tag, ref_kind, attr in _REF_ATTRS.get(kind, ()):
        if ref_kind is None:
            continue
        for node in root.findall(tag):
            value = node.get(attr or "", "")
            if value:
                refs.append((ref_kind, value))
    return refs


def export_descriptions(kernel: Kernel, type_name: str,
                        selector: VersionSelector = "last") -> ExchangeFile:
    """The type plus the transitive closure of everything it references.

    Closure members carry their full version history; the root item-type
    is cut off at the selected version.
    """
    source = kernel.source()
    _, root_version = source.payload("item-type", type_name, selector)

    def all_versions(kind: str, name: str, limit: int | None = None) -> list[bytes]:
        prefix, _, payload_schema = KINDS[kind]
        item_id = kernel.directory.lookup(prefix + name)
        entries = outcome_events_for_schema(kernel.store, item_id, payload_schema)
        count = len(entries) if limit is None else min(limit + 1, len(entries))
        return [read_outcome_by_numeral(kernel.store, item_id, payload_schema, n)
                for n in range(count)]

    collected: dict[tuple[str, str], list[bytes]] = {}
    stack: list[tuple[str, str, int | None]] = [("item-type", type_name, root_version)]
    while stack:
        kind, name, limit = stack.pop()
        if (kind, name) in collected:
            continue
        versions = all_versions(kind, name, limit)
        collected[(kind, name)] = versions
        for document in versions:
            for ref in _refs_in(kind, document):
                if ref not in collected:
                    stack.append((ref[0], ref[1], None))

    exchange = ExchangeFile()
    for kind in KIND_ORDER:
        members = sorted(name for (k, name) in collected if k == kind)
        if kind == "composite":
            members = _topo_composites(collected, members)
        for name in members:
            exchange.add(kind, name, collected[(kind, name)])
    return exchange


def _topo_composites(collected: dict[tuple[str, str], list[bytes]],
                     names: list[str]) -> list[str]:
    deps: dict[str, set[str]] = {}
    for name in names:
        wanted: set[str] = set()
        for document in collected[("composite", name)]:
            for kind, ref in _refs_in("composite", document):
                if kind == "composite" and ref != name:
                    wanted.add(ref)
        deps[name] = wanted & set(names)
    ordered: list[str] = []
    visiting: set[str] = set()

    def visit(name: str) -> None:
        if name in ordered:
            return
        if name in visiting:
            raise InvalidDescription(f"cyclic composite reference at {name!r}")
        visiting.add(name)
        for dep in sorted(deps[name]):
            visit(dep)
        visiting.discard(name)
        ordered.append(name)

    for name in names:
        visit(name)
    return ordered
