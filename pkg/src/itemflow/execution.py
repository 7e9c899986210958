"""Transition execution with full provenance: the kernel's write path.

All mutation funnels through a Transaction: operations work on staged
deep copies of the touched items, accumulate the fragment batch, and
commit it in one store write (outcomes, creations, events in id order,
then mirrors, then directory registrations). Any raise before commit
discards the staged copies, so validation failures, decision/script
errors and injected storage faults leave no trace.

Predefined steps are always-available maintenance actions, hidden from
the workflow, executed under the reserved ``predefined/<Step>`` path and
logged with their payload document as the event's outcome.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass
from typing import Any

from . import items as items_mod
from . import xmlio
from .descriptions import (
    CachingSource,
    DescriptionSnapshot,
    DescriptionSource,
    DirectorySource,
    KINDS,
    LayeredSource,
    instantiate_item,
    resolve_description,
)
from .errors import (
    InvalidDescription,
    NotFound,
    ReservedViewName,
    SchemaValidationFailed,
    Unauthorized,
)
from .items import Item, Event, Outcome, now_utc
from .schema import parse_schema
from .scripting import (
    EngineRegistry,
    ScriptContext,
    ScriptDefinition,
    build_bindings,
    bulk_apply,
    make_decider,
    parse_script_definition,
    run_activity_script,
)
from .storage import (
    Directory,
    FragmentPath,
    FragmentStore,
    JournalRecord,
    WriteBatch,
    collection_fragment,
    creation_batch,
    event_fragment,
    property_fragment,
    replay_history,
    viewpoint_fragment,
)
from .workflow import RESERVED_PATH_PREFIX, Vertex

MAINTAINER_ROLE = "maintainer"

# step name -> payload schema name
PREDEFINED_STEPS: dict[str, str] = {
    "WriteProperty": "PredefWriteProperty",
    "AddMemberToCollection": "PredefAddMember",
    "RemoveMemberFromCollection": "PredefRemoveMember",
    "CreateItemFromDescription": "PredefCreateItem",
    "WriteViewpoint": "PredefWriteViewpoint",
}


@dataclass(frozen=True)
class Job:
    item_id: str
    item_name: str
    activity_path: str
    transition: str
    required_role: str
    outcome_schema: tuple[str, int] | None
    issued_at: str


class Transaction:
    """Staged copies plus the ordered fragment batch for one commit."""

    def __init__(self, kernel: "Kernel"):
        self.kernel = kernel
        self.items: dict[str, Item] = {}
        self.created: set[str] = set()
        self.reservations: list[JournalRecord] = []
        self._outcomes: list[tuple[FragmentPath, bytes, bool]] = []
        self._events: list[tuple[FragmentPath, bytes, bool]] = []
        self._mirrors: list[tuple[FragmentPath, bytes, bool]] = []  # fsync-exempt
        self._creations: list[WriteBatch] = []

    def item(self, item_id: str) -> Item:
        staged = self.items.get(item_id)
        if staged is None:
            staged = items_mod.clone_item(self.kernel.load_item(item_id))
            self.items[item_id] = staged
        return staged

    def read_item(self, item_id: str) -> Item:
        staged = self.items.get(item_id)
        return staged if staged is not None else self.kernel.load_item(item_id)

    def add_created(self, item: Item, record: JournalRecord) -> None:
        self.items[item.id] = item
        self.created.add(item.id)
        self.reservations.append(record)
        self._creations.append(creation_batch(item, record))

    def stage_event(self, item: Item, event: Event, outcome: Outcome | None) -> None:
        if outcome is not None:
            schema = outcome.schema_name
            self._outcomes.append((FragmentPath(
                item.id, "Outcome",
                f"{schema}/{outcome.schema_version}/{outcome.event_id}"),
                outcome.document, True))
            views = {"last", str(item.outcome_counts[schema] - 1)}
            if event.view_name:
                views.add(event.view_name)
            for view in sorted(views):
                vp = item.viewpoints[(schema, view)]
                self._mirrors.append((FragmentPath(
                    item.id, "Viewpoint", f"{schema}/{view}"),
                    viewpoint_fragment(vp), True))
        self._events.append((FragmentPath(item.id, "History", str(event.id)),
                             event_fragment(event), False))

    def stage_property(self, item: Item, name: str, event_id: int) -> None:
        prop = item.properties[name]
        self._mirrors.append((FragmentPath(item.id, "Property", f"{name}/{event_id}"),
                              property_fragment(prop), False))

    def stage_collection(self, item: Item, name: str) -> None:
        collection = item.collections[name]
        self._mirrors.append((FragmentPath(
            item.id, "Collection", f"{name}/{collection.version}"),
            collection_fragment(collection), False))

    def stage_viewpoint(self, item: Item, schema: str, view: str) -> None:
        vp = item.viewpoints[(schema, view)]
        self._mirrors.append((FragmentPath(item.id, "Viewpoint", f"{schema}/{view}"),
                              viewpoint_fragment(vp), True))

    def commit(self) -> None:
        batch = WriteBatch()
        for path, data, replace_ok in self._outcomes:
            batch.put(path, data, replace_ok)
        for creation in self._creations:
            for path, data, replace_ok, durable in creation.fragments:
                batch.put(path, data, replace_ok, durable)
        for path, data, replace_ok in sorted(
                self._events, key=lambda entry: (entry[0].item_id, int(entry[0].sub_path))):
            batch.put(path, data, replace_ok)
        for path, data, replace_ok in self._mirrors:
            batch.put(path, data, replace_ok, durable=False)
        for creation in self._creations:
            for record in creation.registrations:
                batch.register(record)
        self.kernel.store.put_all(batch)
        with self.kernel.cache_lock:
            for item_id, staged in self.items.items():
                self.kernel.items[item_id] = staged
        for item_id in self.items:
            name = self.items[item_id].name
            if name.startswith("/desc/"):
                self.kernel.invalidate_description(name)

    def abort(self) -> None:
        for record in self.reservations:
            self.kernel.directory.release(record)


class Kernel:
    """Single-writer facade: every mutation of every item goes through here."""

    def __init__(self, store: FragmentStore):
        self.store = store
        self.directory = Directory(store)
        self.items: dict[str, Item] = {}
        self.cache_lock = threading.Lock()
        self._item_locks: dict[str, threading.RLock] = {}
        self.registry = EngineRegistry()
        self.registry.register_kernel_function("compile-schema", _compile_schema_check)
        self.overlay: DescriptionSource | None = None
        self._cached_source = CachingSource(DirectorySource(store, self.directory))
        # Snapshots and compiled schemas are immutable per concrete version.
        self._snapshots: dict[tuple[str, int], DescriptionSnapshot] = {}
        self._compiled_schemas: dict[tuple[str, int], object] = {}

    # --- plumbing -------------------------------------------------------------

    def lock(self, item_id: str) -> threading.RLock:
        with self.cache_lock:
            lock = self._item_locks.get(item_id)
            if lock is None:
                lock = threading.RLock()
                self._item_locks[item_id] = lock
            return lock

    def source(self) -> DescriptionSource:
        if self.overlay is not None:
            # No caching while bootstrap layers the exchange file over a
            # store that is still filling up.
            return LayeredSource(DirectorySource(self.store, self.directory),
                                 self.overlay)
        return self._cached_source

    def invalidate_description(self, name: str) -> None:
        for kind, (prefix, _, _) in KINDS.items():
            if name.startswith(prefix):
                self._cached_source.invalidate(kind, name[len(prefix):])

    def validator(self):
        from .errors import MalformedSchema, NoSuchDescription, NoSuchVersion
        from .schema import parse_schema, validate_document

        def validate(schema_name: str, schema_version: int, document: bytes) -> list[str]:
            key = (schema_name, schema_version)
            compiled = None if self.overlay is not None else \
                self._compiled_schemas.get(key)
            if compiled is None:
                try:
                    schema_doc, _ = self.source().payload(
                        "schema", schema_name, schema_version)
                except (NoSuchDescription, NoSuchVersion) as exc:
                    return [f"schema {schema_name!r} v{schema_version} "
                            f"unavailable: {exc.message}"]
                try:
                    compiled = parse_schema(schema_doc)
                except MalformedSchema as exc:
                    return [f"schema {schema_name!r} v{schema_version} is "
                            f"malformed: {exc.message}"]
                if self.overlay is None:
                    self._compiled_schemas[key] = compiled
            return validate_document(compiled, document)

        return validate

    def script_loader(self):
        def load(name: str, version: int) -> ScriptDefinition:
            data, resolved = self.source().payload("script", name, version)
            return parse_script_definition(data, name=name, version=resolved)

        return load

    def load_item(self, item_id: str) -> Item:
        cached = self.items.get(item_id)
        if cached is not None:
            return cached
        if not self.directory.has_id(item_id):
            raise NotFound(f"no item with id {item_id!r}")
        loaded = replay_history(self.store, self.directory, item_id)
        with self.cache_lock:
            return self.items.setdefault(item_id, loaded)

    def item_by_name(self, name: str) -> Item:
        return self.load_item(self.directory.lookup(name))

    # --- agents ----------------------------------------------------------------

    def agent_roles(self, agent_id: str) -> set[str]:
        try:
            agent = self.load_item(agent_id)
        except NotFound:
            raise Unauthorized(f"unknown agent {agent_id!r}") from None
        return set((agent.property_value("Roles") or "").split())

    def is_maintainer(self, agent_id: str) -> bool:
        return MAINTAINER_ROLE in self.agent_roles(agent_id)

    def require_maintainer(self, agent_id: str) -> None:
        if not self.is_maintainer(agent_id):
            raise Unauthorized(f"agent {agent_id!r} lacks the maintainer role")

    def _authorize_activity(self, agent_id: str, vertex: Vertex) -> None:
        roles = self.agent_roles(agent_id)
        if vertex.roles and not (set(vertex.roles) & roles):
            raise Unauthorized(
                f"activity {vertex.name!r} requires one of roles {sorted(vertex.roles)}")

    # --- creation ---------------------------------------------------------------

    def create_instance(self, txn: Transaction, type_name: str, selector,
                        name: str, initial_properties: dict[str, str] | None = None,
                        snapshot: DescriptionSnapshot | None = None) -> Item:
        if snapshot is None:
            snapshot = self.resolve_cached(type_name, selector)
        full_name = snapshot.instance_name(name)
        new_id = uuid.uuid4().hex
        item = instantiate_item(snapshot, new_id, full_name)
        for prop_name, value in (initial_properties or {}).items():
            items_mod.set_property(item, prop_name, value)
        if item.workflow is not None:
            item.workflow.initialize(make_decider(self.script_loader(), item, None))
        record = self.directory.reserve(full_name, new_id, item.type_name, now_utc())
        txn.add_created(item, record)
        return item

    def resolve_cached(self, type_name: str, selector) -> DescriptionSnapshot:
        source = self.source()
        _, numeral = source.payload("item-type", type_name, selector)
        cached = self._snapshots.get((type_name, numeral))
        if cached is None:
            cached = resolve_description(source, type_name, numeral)
            if self.overlay is None:
                self._snapshots[(type_name, numeral)] = cached
        return cached

    # --- execution --------------------------------------------------------------

    def execute_transition(self, item_id: str, activity_path: str, transition: str,
                           agent_id: str, outcome: bytes | None = None,
                           view: str | None = None) -> Event:
        with self.lock(item_id):
            txn = Transaction(self)
            try:
                event = self._transition_in_txn(txn, item_id, activity_path,
                                                transition, agent_id, outcome, view)
                txn.commit()
                return event
            except BaseException:
                txn.abort()
                raise

    def _transition_in_txn(self, txn: Transaction, item_id: str, activity_path: str,
                           transition: str, agent_id: str, outcome: bytes | None,
                           view: str | None) -> Event:
        item = txn.item(item_id)
        if item.workflow is None:
            raise NotFound(f"item {item_id!r} has no workflow")
        _, vertex = item.workflow.find(activity_path)
        self._authorize_activity(agent_id, vertex)
        event, stored = items_mod.append_event(
            item, activity_path, transition, agent_id,
            outcome_document=outcome, view_name=view, validator=self.validator())
        txn.stage_event(item, event, stored)
        decider = make_decider(self.script_loader(), item, outcome)
        item.workflow.apply_transition(activity_path, transition, decider)
        if transition == "Complete":
            for ref in vertex.scripts:
                script = self.script_loader()(ref.name, ref.version)
                context = ScriptContext(
                    item_id=item.id, activity_path=activity_path,
                    inputs=build_bindings(script, item, vertex, outcome),
                    handle=Handle(self, txn, item.id, activity_path, agent_id))
                run_activity_script(script, context, self.registry)
        return event

    def execute_predefined_step(self, item_id: str, step: str, payload: bytes,
                                agent_id: str) -> Event:
        with self.lock(item_id):
            txn = Transaction(self)
            try:
                event, _ = self._step_in_txn(txn, item_id, step, payload, agent_id)
                txn.commit()
                return event
            except BaseException:
                txn.abort()
                raise

    def _step_in_txn(self, txn: Transaction, item_id: str, step: str, payload: bytes,
                     agent_id: str) -> tuple[Event, dict[str, Any]]:
        if step not in PREDEFINED_STEPS:
            raise NotFound(f"no predefined step {step!r}")
        self.require_maintainer(agent_id)
        item = txn.item(item_id)
        schema_name = PREDEFINED_STEPS[step]
        _, schema_version = self.source().payload("schema", schema_name, "last")
        event, stored = items_mod.append_event(
            item, f"{RESERVED_PATH_PREFIX}/{step}", "Complete", agent_id,
            outcome_document=payload, outcome_schema=(schema_name, schema_version),
            validator=self.validator())
        txn.stage_event(item, event, stored)
        info = self._apply_step(txn, item, step, payload, event, agent_id)
        return event, info

    def _apply_step(self, txn: Transaction, item: Item, step: str, payload: bytes,
                    event: Event, agent_id: str) -> dict[str, Any]:
        doc = xmlio.parse_bytes(payload)
        info: dict[str, Any] = {}
        if step == "WriteProperty":
            name = xmlio.require_text(doc, "name")
            value = xmlio.require_text(doc, "value")
            mutable = xmlio.child_text(doc, "mutable", "true") != "false"
            items_mod.set_property(item, name, value, mutable=mutable)
            txn.stage_property(item, name, event.id)
        elif step == "AddMemberToCollection":
            collection_name = xmlio.require_text(doc, "collection")
            slot_id = int(xmlio.require_text(doc, "slot"))
            target_ref = xmlio.require_text(doc, "target")
            target_id = (self.directory.lookup(target_ref)
                         if target_ref.startswith("/") else target_ref)
            target = txn.read_item(target_id)
            items_mod.assign_slot(item, collection_name, slot_id, target)
            txn.stage_collection(item, collection_name)
        elif step == "RemoveMemberFromCollection":
            collection_name = xmlio.require_text(doc, "collection")
            slot_id = int(xmlio.require_text(doc, "slot"))
            items_mod.clear_slot(item, collection_name, slot_id)
            txn.stage_collection(item, collection_name)
        elif step == "WriteViewpoint":
            schema = xmlio.require_text(doc, "schema")
            view = xmlio.require_text(doc, "view")
            if view == "last" or view.isdigit():
                raise ReservedViewName(
                    f"view {view!r} is maintained automatically and cannot be pinned")
            items_mod.set_viewpoint(item, schema, view, int(xmlio.require_text(doc, "event")))
            txn.stage_viewpoint(item, schema, view)
        elif step == "CreateItemFromDescription":
            if item.type_name != KINDS["item-type"][1]:
                raise InvalidDescription(
                    f"item {item.name!r} is not an item description")
            type_name = item.name.rsplit("/", 1)[1]
            selector_raw = xmlio.child_text(doc, "version", "last") or "last"
            selector = selector_raw if selector_raw == "last" else int(selector_raw)
            new_name = xmlio.require_text(doc, "name")
            initial = {node.get("name", ""): node.get("value", "")
                       for node in doc.findall("property")}
            created = self.create_instance(txn, type_name, selector, new_name,
                                           initial_properties=initial)
            info["created_id"] = created.id
            info["created_name"] = created.name
        return info

    # --- jobs ----------------------------------------------------------------------

    def list_jobs(self, agent_id: str, item_id: str | None = None,
                  prefix: str | None = None) -> list[Job]:
        roles = self.agent_roles(agent_id)
        if item_id is not None:
            ids = [item_id]
        elif prefix is not None:
            ids = [iid for _, iid in self.directory.prefix(prefix)]
        else:
            ids = self.directory.all_ids()
        issued = now_utc()
        jobs: list[Job] = []
        for iid in ids:
            try:
                item = self.load_item(iid)
            except NotFound:
                continue
            if item.workflow is None:
                continue
            for path, vertex in item.workflow.all_activities().items():
                if vertex.roles and not (set(vertex.roles) & roles):
                    continue
                for transition in sorted(item.workflow.legal_transitions(path)):
                    jobs.append(Job(
                        item_id=iid, item_name=item.name, activity_path=path,
                        transition=transition,
                        required_role=",".join(vertex.roles),
                        outcome_schema=(vertex.outcome_schema
                                        if transition == "Complete" else None),
                        issued_at=issued))
        return jobs

    # --- instantiation / bulk --------------------------------------------------------

    def instantiate(self, type_name: str, selector, name: str, agent_id: str,
                    initial_properties: dict[str, str] | None = None) -> tuple[Event, str]:
        """Create an instance via the CreateItemFromDescription step on the type item."""
        prefix = KINDS["item-type"][0]
        desc_id = self.directory.lookup(prefix + type_name)
        payload = xmlio.elem("create-item")
        xmlio.sub(payload, "name", text=name)
        xmlio.sub(payload, "version", text=str(selector))
        for prop_name in sorted(initial_properties or {}):
            xmlio.sub(payload, "property", {"name": prop_name,
                                            "value": (initial_properties or {})[prop_name]})
        with self.lock(desc_id):
            txn = Transaction(self)
            try:
                event, info = self._step_in_txn(
                    txn, desc_id, "CreateItemFromDescription",
                    xmlio.canonical_bytes(payload), agent_id)
                txn.commit()
                return event, info["created_id"]
            except BaseException:
                txn.abort()
                raise

    def select_items(self, selector: str) -> list[str]:
        """`<prefix>[?Prop=value&...]` over directory names plus property filters."""
        prefix, _, query = selector.partition("?")
        filters: list[tuple[str, str]] = []
        if query:
            for clause in query.split("&"):
                key, _, value = clause.partition("=")
                filters.append((key, value))
        ids = []
        for _name, iid in self.directory.prefix(prefix):
            if filters:
                item = self.load_item(iid)
                if not all(item.property_value(k) == v for k, v in filters):
                    continue
            ids.append(iid)
        return ids

    def run_script_on(self, item_id: str, script: ScriptDefinition, agent_id: str) -> Any:
        with self.lock(item_id):
            txn = Transaction(self)
            try:
                item = txn.item(item_id)
                context = ScriptContext(
                    item_id=item_id, activity_path=f"bulk/{script.name}",
                    inputs=build_bindings(script, item, None, None),
                    handle=Handle(self, txn, item_id, f"bulk/{script.name}", agent_id))
                result = run_activity_script(script, context, self.registry)
                txn.commit()
                return result
            except BaseException:
                txn.abort()
                raise

    def bulk_apply(self, script: ScriptDefinition, selector: str,
                   agent_id: str) -> list[dict[str, str]]:
        return bulk_apply(script, selector, agent_id, self)


class Handle:
    """Capability handle scripts mutate through; every call is event-logged."""

    def __init__(self, kernel: Kernel, txn: Transaction, item_id: str,
                 activity_path: str, agent_id: str):
        self._kernel = kernel
        self._txn = txn
        self.item_id = item_id
        self.activity_path = activity_path
        self._agent_id = agent_id

    # mutations (each appends an event through the predefined-step path)

    def _step(self, step: str, payload) -> None:
        data = xmlio.canonical_bytes(payload)
        self._kernel._step_in_txn(self._txn, self.item_id, step, data, self._agent_id)

    def write_property(self, name: str, value: str) -> None:
        payload = xmlio.elem("write-property")
        xmlio.sub(payload, "name", text=name)
        xmlio.sub(payload, "value", text=value)
        self._step("WriteProperty", payload)

    def add_member(self, collection: str, slot_id: int, target: str) -> None:
        payload = xmlio.elem("add-member")
        xmlio.sub(payload, "collection", text=collection)
        xmlio.sub(payload, "slot", text=str(slot_id))
        xmlio.sub(payload, "target", text=target)
        self._step("AddMemberToCollection", payload)

    def remove_member(self, collection: str, slot_id: int) -> None:
        payload = xmlio.elem("remove-member")
        xmlio.sub(payload, "collection", text=collection)
        xmlio.sub(payload, "slot", text=str(slot_id))
        self._step("RemoveMemberFromCollection", payload)

    def create_item(self, name: str, version: str = "last") -> str:
        payload = xmlio.elem("create-item")
        xmlio.sub(payload, "name", text=name)
        xmlio.sub(payload, "version", text=version)
        data = xmlio.canonical_bytes(payload)
        _, info = self._kernel._step_in_txn(
            self._txn, self.item_id, "CreateItemFromDescription", data, self._agent_id)
        return info["created_id"]

    def write_viewpoint(self, schema: str, view: str, event_id: int) -> None:
        payload = xmlio.elem("write-viewpoint")
        xmlio.sub(payload, "schema", text=schema)
        xmlio.sub(payload, "view", text=view)
        xmlio.sub(payload, "event", text=str(event_id))
        self._step("WriteViewpoint", payload)

    def execute(self, activity_path: str, transition: str,
                outcome: bytes | None = None) -> None:
        self._kernel._transition_in_txn(self._txn, self.item_id, activity_path,
                                        transition, self._agent_id, outcome, None)

    # reads

    def get_property(self, name: str) -> str | None:
        return self._txn.read_item(self.item_id).property_value(name)

    def resolve_view(self, schema: str, view: str) -> bytes:
        outcome = items_mod.resolve_viewpoint(self._txn.read_item(self.item_id),
                                              schema, view)
        return outcome.document

    def collection_slots(self, name: str) -> list[tuple[int, str | None]]:
        item = self._txn.read_item(self.item_id)
        collection = item.collections.get(name)
        if collection is None:
            raise NotFound(f"no collection {name!r}")
        return [(slot.id, slot.member) for slot in collection.slots]

    def member_property(self, member_id: str, name: str) -> str | None:
        return self._txn.read_item(member_id).property_value(name)


def _compile_schema_check(context: ScriptContext) -> str:
    """Kernel function: fail the transition when a submitted schema is malformed."""
    document = context.inputs.get("document")
    if document is None:
        raise SchemaValidationFailed("schema compile check got no document input")
    parse_schema(document)  # raises MalformedSchema
    return "ok"
