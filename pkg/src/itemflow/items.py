"""Items and their constituent structures, plus the pure state-changing operations.

An Item is the universal business object: identity, properties, a workflow
instance, collections of typed slots, and an append-only history of events
with their outcomes and viewpoints. Nothing here persists or authorizes;
execution policy lives in the execution module and durability in storage.

Event ids are a dense per-item sequence starting at 0. Every outcome is
keyed by (schema name, schema version, event id). Viewpoints are named
pointers: "last" always tracks the newest outcome of a schema, and each
outcome also receives the next free numeral as a view name, which is what
description versioning builds on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable

from .errors import (
    ImmutableProperty,
    NoSuchView,
    NotFound,
    SchemaValidationFailed,
    SlotEmpty,
    SlotOccupied,
    TypeMismatch,
)
from .workflow import RESERVED_PATH_PREFIX, WorkflowGraph

PROP_NAME = "Name"
PROP_TYPE = "Type"

OutcomeValidator = Callable[[str, int, bytes], list[str]]


@dataclass
class Property:
    name: str
    value: str
    mutable: bool = True


@dataclass
class Slot:
    id: int
    constraints: tuple[tuple[str, str], ...] = ()
    member: str | None = None


@dataclass
class Collection:
    name: str
    slots: list[Slot] = field(default_factory=list)
    version: int = 0

    def slot(self, slot_id: int) -> Slot:
        for s in self.slots:
            if s.id == slot_id:
                return s
        raise NotFound(f"collection {self.name!r} has no slot {slot_id}")


@dataclass(frozen=True)
class OutcomeRef:
    schema_name: str
    schema_version: int
    event_id: int


@dataclass(frozen=True)
class Event:
    id: int
    timestamp: str
    agent_id: str
    activity_path: str
    transition: str
    outcome_ref: OutcomeRef | None = None
    view_name: str | None = None

    @property
    def predefined(self) -> bool:
        return self.activity_path.startswith(RESERVED_PATH_PREFIX + "/")


@dataclass(frozen=True)
class Outcome:
    schema_name: str
    schema_version: int
    event_id: int
    document: bytes


@dataclass(frozen=True)
class Viewpoint:
    schema_name: str
    view_name: str
    event_id: int


class Item:
    def __init__(self, item_id: str, name: str, type_name: str):
        self.id = item_id
        self.properties: dict[str, Property] = {}
        self.properties[PROP_NAME] = Property(PROP_NAME, name, mutable=False)
        self.properties[PROP_TYPE] = Property(PROP_TYPE, type_name, mutable=False)
        self.workflow: WorkflowGraph | None = None
        self.collections: dict[str, Collection] = {}
        self.history: list[Event] = []
        self.outcomes: dict[tuple[str, int, int], Outcome] = {}
        self.viewpoints: dict[tuple[str, str], Viewpoint] = {}
        # outcomes seen per schema name; the next numeral view, maintained by
        # append_event so numbering is O(1) on long histories
        self.outcome_counts: dict[str, int] = {}

    @property
    def name(self) -> str:
        return self.properties[PROP_NAME].value

    @property
    def type_name(self) -> str:
        return self.properties[PROP_TYPE].value

    def property_value(self, name: str, default: str | None = None) -> str | None:
        prop = self.properties.get(name)
        return prop.value if prop is not None else default

    def __repr__(self) -> str:
        return f"Item({self.id!r}, name={self.name!r}, type={self.type_name!r})"


def create_item(item_id: str, name: str, type_name: str) -> Item:
    """A fresh Item: Name/Type properties, otherwise completely empty."""
    return Item(item_id, name, type_name)


def set_property(item: Item, name: str, value: str, mutable: bool = True) -> Item:
    """Set or create a property; immutable properties reject writes."""
    existing = item.properties.get(name)
    if existing is None:
        item.properties[name] = Property(name, value, mutable=mutable)
        return item
    if not existing.mutable:
        raise ImmutableProperty(f"property {name!r} is immutable")
    existing.value = value
    return item


def now_utc() -> str:
    return datetime.now(timezone.utc).isoformat()


def clone_item(item: Item) -> Item:
    """Transaction staging copy.

    History entries, outcomes and viewpoints are immutable values, so the
    containers are copied shallowly; only properties, collections and the
    workflow need real copies. Keeps staging O(changes), not O(history).
    """
    clone = Item.__new__(Item)
    clone.id = item.id
    clone.properties = {name: Property(p.name, p.value, p.mutable)
                        for name, p in item.properties.items()}
    clone.workflow = item.workflow.clone() if item.workflow is not None else None
    clone.collections = {
        name: Collection(c.name,
                         [Slot(s.id, s.constraints, s.member) for s in c.slots],
                         c.version)
        for name, c in item.collections.items()}
    clone.history = list(item.history)
    clone.outcomes = dict(item.outcomes)
    clone.viewpoints = dict(item.viewpoints)
    clone.outcome_counts = dict(item.outcome_counts)
    return clone


def append_event(item: Item, activity_path: str, transition: str, agent_id: str,
                 outcome_document: bytes | None = None, view_name: str | None = None,
                 validator: OutcomeValidator | None = None,
                 outcome_schema: tuple[str, int] | None = None,
                 timestamp: str | None = None,
                 check_legality: bool = True) -> tuple[Event, Outcome | None]:
    """Append one event, storing its outcome and repointing viewpoints.

    For workflow paths the outcome contract comes from the activity
    declaration; predefined paths pass ``outcome_schema`` explicitly.
    Validation failures leave the item untouched.
    """
    predefined = activity_path.startswith(RESERVED_PATH_PREFIX + "/")
    if not predefined:
        if item.workflow is None:
            raise NotFound(f"item {item.id!r} has no workflow")
        if check_legality and transition not in item.workflow.legal_transitions(activity_path):
            from .errors import IllegalTransition
            raise IllegalTransition(
                f"transition {transition!r} not legal for {activity_path!r}")
        _, vertex = item.workflow.find(activity_path)
        declared = vertex.outcome_schema if transition == "Complete" else None
    else:
        declared = outcome_schema

    if declared is None and outcome_document is not None:
        raise SchemaValidationFailed(
            f"activity {activity_path!r} declares no outcome for {transition!r}")
    if declared is not None and outcome_document is None:
        raise SchemaValidationFailed(
            f"activity {activity_path!r} requires an outcome of schema {declared[0]!r}")
    if declared is not None and validator is not None:
        violations = validator(declared[0], declared[1], outcome_document or b"")
        if violations:
            raise SchemaValidationFailed(
                f"outcome rejected by schema {declared[0]!r} v{declared[1]}",
                violations=violations)

    event_id = len(item.history)
    outcome: Outcome | None = None
    ref: OutcomeRef | None = None
    if declared is not None:
        ref = OutcomeRef(declared[0], declared[1], event_id)
        outcome = Outcome(declared[0], declared[1], event_id, outcome_document or b"")
    event = Event(
        id=event_id,
        timestamp=timestamp or now_utc(),
        agent_id=agent_id,
        activity_path=activity_path,
        transition=transition,
        outcome_ref=ref,
        view_name=view_name,
    )
    item.history.append(event)
    if outcome is not None and ref is not None:
        item.outcomes[(ref.schema_name, ref.schema_version, ref.event_id)] = outcome
        schema = ref.schema_name
        numeral = item.outcome_counts.get(schema, 0)
        item.outcome_counts[schema] = numeral + 1
        item.viewpoints[(schema, "last")] = Viewpoint(schema, "last", event_id)
        item.viewpoints[(schema, str(numeral))] = Viewpoint(schema, str(numeral), event_id)
        if view_name:
            item.viewpoints[(schema, view_name)] = Viewpoint(schema, view_name, event_id)
    return event, outcome


def set_viewpoint(item: Item, schema_name: str, view_name: str, event_id: int) -> Viewpoint:
    """Pin a named view to an existing outcome-bearing event."""
    event = next((e for e in item.history if e.id == event_id), None)
    if event is None or event.outcome_ref is None or event.outcome_ref.schema_name != schema_name:
        raise NoSuchView(
            f"event {event_id} carries no outcome of schema {schema_name!r}")
    vp = Viewpoint(schema_name, view_name, event_id)
    item.viewpoints[(schema_name, view_name)] = vp
    return vp


def resolve_viewpoint(item: Item, schema_name: str, view_name: str) -> Outcome:
    """Pure read: the outcome document a viewpoint designates."""
    vp = item.viewpoints.get((schema_name, view_name))
    if vp is None:
        raise NoSuchView(f"no view {view_name!r} for schema {schema_name!r}")
    event = item.history[vp.event_id]
    assert event.outcome_ref is not None
    key = (event.outcome_ref.schema_name, event.outcome_ref.schema_version,
           event.outcome_ref.event_id)
    return item.outcomes[key]


def satisfies_constraints(target: Item, constraints: tuple[tuple[str, str], ...],
                          ) -> tuple[str, str] | None:
    """First violated (property, required-value) pair, or None when all hold."""
    for prop_name, required in constraints:
        if target.property_value(prop_name) != required:
            return (prop_name, required)
    return None


def assign_slot(item: Item, collection_name: str, slot_id: int, target: Item) -> Collection:
    collection = item.collections.get(collection_name)
    if collection is None:
        raise NotFound(f"no collection {collection_name!r}")
    slot = collection.slot(slot_id)
    if slot.member is not None:
        raise SlotOccupied(f"slot {slot_id} of {collection_name!r} holds {slot.member!r}")
    failed = satisfies_constraints(target, slot.constraints)
    if failed is not None:
        raise TypeMismatch(
            f"item {target.id!r} fails constraint {failed[0]}={failed[1]!r} "
            f"(has {target.property_value(failed[0])!r})", constraint=failed)
    slot.member = target.id
    collection.version += 1
    return collection


def clear_slot(item: Item, collection_name: str, slot_id: int) -> Collection:
    collection = item.collections.get(collection_name)
    if collection is None:
        raise NotFound(f"no collection {collection_name!r}")
    slot = collection.slot(slot_id)
    if slot.member is None:
        raise SlotEmpty(f"slot {slot_id} of {collection_name!r} is already empty")
    slot.member = None
    collection.version += 1
    return collection


def item_digest(item: Item) -> dict:
    """Canonical observable state, used for replay/live comparisons."""
    return {
        "id": item.id,
        "properties": {p.name: [p.value, p.mutable] for p in item.properties.values()},
        "workflow": item.workflow.state_snapshot() if item.workflow is not None else None,
        "collections": {
            c.name: {
                "version": c.version,
                "slots": [[s.id, list(map(list, s.constraints)), s.member] for s in c.slots],
            }
            for c in item.collections.values()
        },
        "history_length": len(item.history),
        "events": [[e.id, e.activity_path, e.transition, e.agent_id] for e in item.history],
        "viewpoints": {f"{s}:{v}": vp.event_id for (s, v), vp in sorted(item.viewpoints.items())},
        "outcomes": sorted(f"{s}:{v}:{e}" for (s, v, e) in item.outcomes),
    }
