"""Append-only fragment persistence, the item directory, and history replay.

Every item persists as addressable fragments under ``<item-id>/<Category>/
<sub-path>``. Event fragments (`History/<n>`) are the source of truth and
are strictly write-once; `Viewpoint` fragments may be overwritten in
place; everything else is written once per version (`Property/<name>/init`
at creation then `Property/<name>/<event-id>`, `Collection/<name>/<version>`).
Property/Collection/Viewpoint fragments are denormalized mirrors: replay
never reads them, it folds events over the creation snapshot, so a crash
that loses a mirror write loses nothing observable.

Commits go through ``put_all`` so a batch either stages completely or not
at all; callers order outcome fragments before the event fragment and
mirrors after it, and acknowledge only once the batch returns.

The directory is a JSONL journal replayed at startup; a torn trailing
line (crash mid-append) is ignored, which is safe because registration is
acknowledged only after the append returns.
"""

from __future__ import annotations

import json
import os
import threading
import urllib.parse
import uuid
from dataclasses import dataclass

from . import items as items_mod
from . import xmlio
from .errors import (
    CorruptHistory,
    DuplicateId,
    DuplicateName,
    FragmentOverwrite,
    HistoryOverwrite,
    NotFound,
)
from .items import Collection, Item, OutcomeRef, Property, Slot
from .scripting import ScriptDefinition, make_decider, parse_script_definition
from .workflow import deserialize_structure

CATEGORIES = ("Property", "Workflow", "History", "Outcome", "Viewpoint", "Collection")


@dataclass(frozen=True)
class FragmentPath:
    item_id: str
    category: str
    sub_path: str

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown fragment category {self.category!r}")

    @property
    def logical(self) -> str:
        return f"{self.item_id}/{self.category}/{self.sub_path}"

    @staticmethod
    def parse(logical: str) -> "FragmentPath":
        item_id, category, sub = logical.split("/", 2)
        return FragmentPath(item_id, category, sub)


@dataclass(frozen=True)
class JournalRecord:
    name: str
    item_id: str
    type_name: str
    created_at: str


# One commit = ordered fragment writes plus directory registrations.
@dataclass
class WriteBatch:
    # (path, data, replace_ok, durable); non-durable fragments are mirrors
    # replay can rebuild, so they may skip fsync.
    fragments: list[tuple[FragmentPath, bytes, bool, bool]]
    registrations: list[JournalRecord]

    def __init__(self) -> None:
        self.fragments = []
        self.registrations = []

    def put(self, path: FragmentPath, data: bytes, replace_ok: bool = False,
            durable: bool = True) -> None:
        self.fragments.append((path, data, replace_ok, durable))

    def register(self, record: JournalRecord) -> None:
        self.registrations.append(record)


class FragmentStore:
    """Interface; see MemoryStore and FileStore."""

    def put_fragment(self, path: FragmentPath, data: bytes, replace_ok: bool = False) -> str:
        batch = WriteBatch()
        batch.put(path, data, replace_ok)
        self.put_all(batch)
        return path.logical

    def put_all(self, batch: WriteBatch) -> None:
        raise NotImplementedError

    def get_fragment(self, path: FragmentPath) -> bytes:
        raise NotImplementedError

    def list_fragments(self, prefix: str) -> list[str]:
        raise NotImplementedError

    def read_journal(self) -> list[JournalRecord]:
        raise NotImplementedError

    def _check_overwrite(self, path: FragmentPath, data: bytes, replace_ok: bool,
                         existing: bytes | None) -> bool:
        """True when the write should proceed, False for a same-bytes no-op."""
        if existing is None:
            return True
        if path.category == "History":
            raise HistoryOverwrite(f"history fragment {path.logical} already written")
        if path.category == "Viewpoint" or replace_ok:
            return True
        if existing == data:
            return False
        raise FragmentOverwrite(f"fragment {path.logical} already written")


class MemoryStore(FragmentStore):
    def __init__(self) -> None:
        self._data: dict[str, bytes] = {}
        self._journal: list[JournalRecord] = []
        self._lock = threading.Lock()

    def __deepcopy__(self, memo: dict) -> "MemoryStore":
        clone = MemoryStore()
        clone._data = dict(self._data)
        clone._journal = list(self._journal)
        return clone

    def put_all(self, batch: WriteBatch) -> None:
        with self._lock:
            todo = []
            staged: dict[str, bytes] = {}
            for path, data, replace_ok, _durable in batch.fragments:
                existing = staged.get(path.logical, self._data.get(path.logical))
                if self._check_overwrite(path, data, replace_ok, existing):
                    todo.append((path.logical, data))
                    staged[path.logical] = data
            for logical, data in todo:
                self._data[logical] = data
            self._journal.extend(batch.registrations)

    def get_fragment(self, path: FragmentPath) -> bytes:
        data = self._data.get(path.logical)
        if data is None:
            raise NotFound(f"no fragment {path.logical}")
        return data

    def list_fragments(self, prefix: str) -> list[str]:
        return sorted(k for k in self._data if k.startswith(prefix))

    def read_journal(self) -> list[JournalRecord]:
        return list(self._journal)


def _quote(component: str) -> str:
    return urllib.parse.quote(component, safe="")


def _unquote(component: str) -> str:
    return urllib.parse.unquote(component)


class FileStore(FragmentStore):
    """One directory per item id; fragment files named by their sub-paths."""

    def __init__(self, root: str, fsync: bool = True):
        self.root = root
        self.fsync = fsync
        # Batches touching the same item are already serialized by the
        # kernel's per-item locks; only the journal file is shared.
        self._journal_lock = threading.Lock()
        self._known_dirs: set[str] = set()
        os.makedirs(os.path.join(root, "items"), exist_ok=True)
        self._journal_path = os.path.join(root, "directory.log")

    def _fs_path(self, path: FragmentPath) -> str:
        components = [_quote(c) for c in path.logical.split("/")]
        return os.path.join(self.root, "items", *components)

    def put_all(self, batch: WriteBatch) -> None:
        staged: list[tuple[str, str]] = []  # (tmp, final)
        staged_view: dict[str, bytes] = {}
        try:
            for path, data, replace_ok, durable in batch.fragments:
                final = self._fs_path(path)
                existing: bytes | None = staged_view.get(path.logical)
                if existing is None:
                    try:
                        with open(final, "rb") as fh:
                            existing = fh.read()
                    except FileNotFoundError:
                        existing = None
                if not self._check_overwrite(path, data, replace_ok, existing):
                    continue
                staged_view[path.logical] = data
                parent = os.path.dirname(final)
                if parent not in self._known_dirs:
                    os.makedirs(parent, exist_ok=True)
                    self._known_dirs.add(parent)
                tmp = final + f".tmp-{uuid.uuid4().hex[:8]}"
                with open(tmp, "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    if self.fsync and durable:
                        os.fsync(fh.fileno())
                staged.append((tmp, final))
        except Exception:
            for tmp, _ in staged:
                try:
                    os.unlink(tmp)
                except OSError:
                    pass
            raise
        for tmp, final in staged:
            os.replace(tmp, final)
        if batch.registrations:
            with self._journal_lock:
                with open(self._journal_path, "a", encoding="utf-8") as fh:
                    for record in batch.registrations:
                        fh.write(json.dumps({
                            "name": record.name, "id": record.item_id,
                            "type": record.type_name, "at": record.created_at,
                        }, sort_keys=True) + "\n")
                    fh.flush()
                    if self.fsync:
                        os.fsync(fh.fileno())

    def get_fragment(self, path: FragmentPath) -> bytes:
        fs = self._fs_path(path)
        if not os.path.exists(fs):
            raise NotFound(f"no fragment {path.logical}")
        with open(fs, "rb") as fh:
            return fh.read()

    def list_fragments(self, prefix: str) -> list[str]:
        components = prefix.split("/")
        # The final component may be a partial name; walk its parent.
        exact = [_quote(c) for c in components if c]
        base = os.path.join(self.root, "items", *exact)
        partial = ""
        if not prefix.endswith("/") and not os.path.isdir(base):
            partial = exact[-1] if exact else ""
            base = os.path.join(self.root, "items", *exact[:-1])
        found: list[str] = []
        if not os.path.isdir(base):
            return []
        for dirpath, _dirnames, filenames in os.walk(base):
            for filename in filenames:
                if filename.startswith(".") or ".tmp-" in filename:
                    continue
                full = os.path.join(dirpath, filename)
                rel = os.path.relpath(full, os.path.join(self.root, "items"))
                logical = "/".join(_unquote(c) for c in rel.split(os.sep))
                if logical.startswith(prefix):
                    found.append(logical)
        if partial:
            found = [f for f in found if f.startswith(prefix)]
        return sorted(found)

    def read_journal(self) -> list[JournalRecord]:
        records: list[JournalRecord] = []
        if not os.path.exists(self._journal_path):
            return records
        with open(self._journal_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    raw = json.loads(line)
                    records.append(JournalRecord(raw["name"], raw["id"],
                                                 raw["type"], raw["at"]))
                except (json.JSONDecodeError, KeyError):
                    # Torn trailing line from a crash mid-append; never acknowledged.
                    continue
        return records


class Directory:
    """Names to ids and back, rebuilt from the journal at startup."""

    def __init__(self, store: FragmentStore):
        self._store = store
        self._by_name: dict[str, str] = {}
        self._by_id: dict[str, JournalRecord] = {}
        self._lock = threading.Lock()
        for record in store.read_journal():
            self._by_name[record.name] = record.item_id
            self._by_id[record.item_id] = record

    def check_free(self, name: str, item_id: str) -> None:
        if name in self._by_name:
            raise DuplicateName(f"name {name!r} is already registered")
        if item_id in self._by_id:
            raise DuplicateId(f"id {item_id!r} is already registered")

    def reserve(self, name: str, item_id: str, type_name: str,
                created_at: str) -> JournalRecord:
        """Claim a name/id pair; release() on transaction abort."""
        with self._lock:
            self.check_free(name, item_id)
            record = JournalRecord(name, item_id, type_name, created_at)
            self._by_name[name] = item_id
            self._by_id[item_id] = record
            return record

    def release(self, record: JournalRecord) -> None:
        with self._lock:
            if self._by_name.get(record.name) == record.item_id:
                del self._by_name[record.name]
            self._by_id.pop(record.item_id, None)

    def lookup(self, name: str) -> str:
        item_id = self._by_name.get(name)
        if item_id is None:
            raise NotFound(f"no item registered under {name!r}")
        return item_id

    def record(self, item_id: str) -> JournalRecord:
        rec = self._by_id.get(item_id)
        if rec is None:
            raise NotFound(f"no item with id {item_id!r}")
        return rec

    def has_name(self, name: str) -> bool:
        return name in self._by_name

    def has_id(self, item_id: str) -> bool:
        return item_id in self._by_id

    def prefix(self, name_prefix: str) -> list[tuple[str, str]]:
        return sorted((name, item_id) for name, item_id in self._by_name.items()
                      if name.startswith(name_prefix))

    def all_ids(self) -> list[str]:
        return sorted(self._by_id)


def lookup(directory: Directory, name_path: str) -> str:
    return directory.lookup(name_path)


# --- fragment codecs -----------------------------------------------------------

def property_fragment(prop: Property) -> bytes:
    return xmlio.canonical_bytes(xmlio.elem("property", {
        "mutable": "true" if prop.mutable else "false",
        "name": prop.name, "value": prop.value}))


def parse_property_fragment(data: bytes) -> Property:
    node = xmlio.parse_bytes(data)
    return Property(node.get("name", ""), node.get("value", ""),
                    node.get("mutable") != "false")


def collection_fragment(collection: Collection) -> bytes:
    root = xmlio.elem("collection", {"name": collection.name,
                                     "version": str(collection.version)})
    for slot in collection.slots:
        attrs = {"id": str(slot.id)}
        if slot.member is not None:
            attrs["member"] = slot.member
        node = xmlio.sub(root, "slot", attrs)
        for prop_name, required in slot.constraints:
            xmlio.sub(node, "constraint", {"property": prop_name, "value": required})
    return xmlio.canonical_bytes(root)


def parse_collection_fragment(data: bytes) -> Collection:
    root = xmlio.parse_bytes(data)
    slots = []
    for node in root.findall("slot"):
        constraints = tuple((c.get("property", ""), c.get("value", ""))
                            for c in node.findall("constraint"))
        slots.append(Slot(id=int(node.get("id", "0")), constraints=constraints,
                          member=node.get("member")))
    return Collection(root.get("name", ""), slots, int(root.get("version", "0")))


def event_fragment(event: items_mod.Event) -> bytes:
    root = xmlio.elem("event", {
        "activity": event.activity_path,
        "agent": event.agent_id,
        "id": str(event.id),
        "timestamp": event.timestamp,
        "transition": event.transition,
    })
    if event.outcome_ref is not None:
        xmlio.sub(root, "outcome-ref", {
            "schema": event.outcome_ref.schema_name,
            "version": str(event.outcome_ref.schema_version)})
    if event.view_name is not None:
        xmlio.sub(root, "view", text=event.view_name)
    return xmlio.canonical_bytes(root)


def parse_event_fragment(data: bytes) -> items_mod.Event:
    root = xmlio.parse_bytes(data)
    event_id = int(root.get("id", "0"))
    ref_node = root.find("outcome-ref")
    ref = None
    if ref_node is not None:
        ref = OutcomeRef(ref_node.get("schema", ""),
                         int(ref_node.get("version", "0")), event_id)
    view = root.find("view")
    return items_mod.Event(
        id=event_id,
        timestamp=root.get("timestamp", ""),
        agent_id=root.get("agent", ""),
        activity_path=root.get("activity", ""),
        transition=root.get("transition", ""),
        outcome_ref=ref,
        view_name=view.text if view is not None else None,
    )


def viewpoint_fragment(vp: items_mod.Viewpoint) -> bytes:
    return xmlio.canonical_bytes(xmlio.elem("viewpoint", {
        "event": str(vp.event_id), "schema": vp.schema_name, "view": vp.view_name}))


# --- fragment-level description access (no item replay required) ------------------

def outcome_events_for_schema(store: FragmentStore, item_id: str,
                              schema_name: str) -> list[tuple[int, int]]:
    """(event-id, schema-version) pairs for a schema, ordered by event id.

    Reads fragments directly, so it works on items that are not loaded;
    the n-th entry is version numeral n.
    """
    found: list[tuple[int, int]] = []
    prefix = f"{item_id}/Outcome/{schema_name}/"
    for logical in store.list_fragments(prefix):
        rest = logical[len(prefix):]
        version_str, _, event_str = rest.partition("/")
        try:
            found.append((int(event_str), int(version_str)))
        except ValueError:
            continue
    return sorted(found)


def read_outcome_by_numeral(store: FragmentStore, item_id: str, schema_name: str,
                            numeral: int | str) -> bytes:
    entries = outcome_events_for_schema(store, item_id, schema_name)
    if not entries:
        raise NotFound(f"item {item_id!r} has no outcomes of schema {schema_name!r}")
    if numeral == "last":
        index = len(entries) - 1
    else:
        index = int(numeral)
    if index < 0 or index >= len(entries):
        raise NotFound(f"no view {numeral!r} of schema {schema_name!r} on {item_id!r}")
    event_id, schema_version = entries[index]
    return store.get_fragment(FragmentPath(
        item_id, "Outcome", f"{schema_name}/{schema_version}/{event_id}"))


def load_script(store: FragmentStore, directory: Directory, name: str,
                version: int | str) -> ScriptDefinition:
    item_id = directory.lookup(f"/desc/scripts/{name}")
    data = read_outcome_by_numeral(store, item_id, "Script", version)
    resolved = version if isinstance(version, int) else \
        len(outcome_events_for_schema(store, item_id, "Script")) - 1
    return parse_script_definition(data, name=name, version=int(resolved))


# --- replay -----------------------------------------------------------------------

def _store_decider(store: FragmentStore, directory: Directory, item: Item,
                   submitted: bytes | None):
    def loader(name: str, version: int) -> ScriptDefinition:
        return load_script(store, directory, name, version)

    return make_decider(loader, item, submitted)


def apply_predefined_effect(item: Item, step_name: str, payload: bytes) -> None:
    """Re-apply a logged predefined step's effect (no re-validation)."""
    doc = xmlio.parse_bytes(payload)
    if step_name == "WriteProperty":
        name = xmlio.require_text(doc, "name")
        value = xmlio.require_text(doc, "value")
        mutable = xmlio.child_text(doc, "mutable", "true") != "false"
        prop = item.properties.get(name)
        if prop is None:
            item.properties[name] = Property(name, value, mutable=mutable)
        else:
            prop.value = value
    elif step_name == "AddMemberToCollection":
        collection = item.collections[xmlio.require_text(doc, "collection")]
        slot = collection.slot(int(xmlio.require_text(doc, "slot")))
        slot.member = xmlio.require_text(doc, "target")
        collection.version += 1
    elif step_name == "RemoveMemberFromCollection":
        collection = item.collections[xmlio.require_text(doc, "collection")]
        slot = collection.slot(int(xmlio.require_text(doc, "slot")))
        slot.member = None
        collection.version += 1
    elif step_name == "WriteViewpoint":
        items_mod.set_viewpoint(item, xmlio.require_text(doc, "schema"),
                                xmlio.require_text(doc, "view"),
                                int(xmlio.require_text(doc, "event")))
    elif step_name == "CreateItemFromDescription":
        pass  # the new item carries its own fragments; nothing changes here
    else:
        raise CorruptHistory(f"unknown predefined step {step_name!r}")


def load_creation_snapshot(store: FragmentStore, directory: Directory,
                           item_id: str) -> Item:
    record = directory.record(item_id)
    item = Item(item_id, record.name, record.type_name)
    prop_prefix = f"{item_id}/Property/"
    for logical in store.list_fragments(prop_prefix):
        if logical[len(prop_prefix):].rpartition("/")[2] != "init":
            continue
        prop = parse_property_fragment(store.get_fragment(FragmentPath.parse(logical)))
        item.properties[prop.name] = prop
    coll_prefix = f"{item_id}/Collection/"
    for logical in store.list_fragments(coll_prefix):
        if logical[len(coll_prefix):].rpartition("/")[2] != "0":
            continue
        collection = parse_collection_fragment(
            store.get_fragment(FragmentPath.parse(logical)))
        item.collections[collection.name] = collection
    try:
        layout = store.get_fragment(FragmentPath(item_id, "Workflow", "layout"))
        item.workflow = deserialize_structure(xmlio.parse_bytes(layout))
    except NotFound:
        item.workflow = None
    return item


def replay_history(store: FragmentStore, directory: Directory, item_id: str) -> Item:
    """Fold events 0..n over the creation snapshot; exact current state."""
    item = load_creation_snapshot(store, directory, item_id)
    history_prefix = f"{item_id}/History/"
    event_ids = []
    for logical in store.list_fragments(history_prefix):
        tail = logical[len(history_prefix):]
        try:
            event_ids.append(int(tail))
        except ValueError:
            raise CorruptHistory(f"undecodable history fragment {logical!r}") from None
    event_ids.sort()
    for expected, actual in enumerate(event_ids):
        if expected != actual:
            raise CorruptHistory(f"history of {item_id!r} is missing event id {expected}")

    if item.workflow is not None:
        item.workflow.initialize(_store_decider(store, directory, item, None))

    for event_id in event_ids:
        raw = store.get_fragment(FragmentPath(item_id, "History", str(event_id)))
        try:
            event = parse_event_fragment(raw)
        except Exception as exc:
            raise CorruptHistory(f"undecodable event {event_id} of {item_id!r}: {exc}") from exc
        if event.id != event_id:
            raise CorruptHistory(
                f"event fragment {event_id} of {item_id!r} claims id {event.id}")
        document: bytes | None = None
        if event.outcome_ref is not None:
            ref = event.outcome_ref
            document = store.get_fragment(FragmentPath(
                item_id, "Outcome",
                f"{ref.schema_name}/{ref.schema_version}/{ref.event_id}"))
        schema_ref = None
        if event.outcome_ref is not None:
            schema_ref = (event.outcome_ref.schema_name, event.outcome_ref.schema_version)
        replayed, _ = items_mod.append_event(
            item, event.activity_path, event.transition, event.agent_id,
            outcome_document=document, view_name=event.view_name,
            outcome_schema=schema_ref if event.predefined else None,
            timestamp=event.timestamp, check_legality=False,
        )
        if replayed.id != event.id:
            raise CorruptHistory(f"replay id drift at event {event.id} of {item_id!r}")
        if event.predefined:
            step_name = event.activity_path.split("/", 1)[1]
            assert document is not None
            apply_predefined_effect(item, step_name, document)
        else:
            assert item.workflow is not None
            from .errors import IllegalTransition
            try:
                item.workflow.apply_transition(
                    event.activity_path, event.transition,
                    _store_decider(store, directory, item, document))
            except IllegalTransition as exc:
                raise CorruptHistory(
                    f"event {event.id} of {item_id!r} is not replayable: "
                    f"{exc.message}") from exc
    return item


def creation_batch(item: Item, record: JournalRecord) -> WriteBatch:
    """Fragments + registration for a freshly created item."""
    from .workflow import serialize_structure
    batch = WriteBatch()
    for prop in item.properties.values():
        batch.put(FragmentPath(item.id, "Property", f"{prop.name}/init"),
                  property_fragment(prop))
    for collection in item.collections.values():
        batch.put(FragmentPath(item.id, "Collection", f"{collection.name}/0"),
                  collection_fragment(collection))
    if item.workflow is not None:
        batch.put(FragmentPath(item.id, "Workflow", "layout"),
                  xmlio.canonical_bytes(serialize_structure(item.workflow)))
    batch.register(record)
    return batch
