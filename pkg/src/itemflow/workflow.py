"""Workflow graphs: structure, activity state machines, enabledness, transitions.

A graph is a directed arrangement of atomic/composite activities plus
control vertices (and-split, and-join, xor-split, loop). Progress is
tracked with tokens resting on edges: an atomic activity is enabled when
a token sits on one of its in-edges. Control vertices fire immediately
when their condition is met (all in-edges for an and-join, token arrival
for the rest), so after every transition tokens only rest on activity
in-edges or at the terminal.

Decision vertices (xor-split, loop) carry a script reference; the caller
supplies a ``decider`` callback so this module stays independent of the
script engine. Loops keep a per-vertex iteration counter and reset their
body to Waiting on each new iteration; at most one iteration is active
at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable
import xml.etree.ElementTree as ET

from .errors import IllegalTransition, InvalidGraph, NoSuchActivity, UnknownBranchLabel
from .xmlio import elem, sub

RESERVED_PATH_PREFIX = "predefined"

START, TERMINAL, ACTIVITY, COMPOSITE = "start", "terminal", "activity", "composite"
AND_SPLIT, AND_JOIN, XOR_SPLIT, LOOP = "and_split", "and_join", "xor_split", "loop"

LOOP_AGAIN, LOOP_EXIT = "true", "false"


class ActivityState(str, Enum):
    WAITING = "Waiting"
    STARTED = "Started"
    SUSPENDED = "Suspended"
    FINISHED = "Finished"


# transition name -> (from state, to state)
TRANSITION_TABLE: dict[str, tuple[ActivityState, ActivityState]] = {
    "Start": (ActivityState.WAITING, ActivityState.STARTED),
    "Complete": (ActivityState.STARTED, ActivityState.FINISHED),
    "Suspend": (ActivityState.STARTED, ActivityState.SUSPENDED),
    "Resume": (ActivityState.SUSPENDED, ActivityState.STARTED),
}


@dataclass(frozen=True)
class ScriptRef:
    name: str
    version: int


@dataclass
class Vertex:
    name: str
    kind: str
    outcome_schema: tuple[str, int] | None = None
    roles: tuple[str, ...] = ()
    scripts: tuple[ScriptRef, ...] = ()
    properties: dict[str, str] = field(default_factory=dict)
    state: ActivityState = ActivityState.WAITING
    children: "WorkflowGraph | None" = None
    decision: ScriptRef | None = None
    loop_count: int = 0
    # And-joins fire on a token count equal to their matched split's branch
    # count; xor branches may deliver that token on alternative in-edges.
    join_arity: int | None = None


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    label: str | None = None


Decider = Callable[[Vertex], str]


class WorkflowGraph:
    def __init__(self, vertices: list[Vertex], edges: list[Edge]):
        self.vertices: dict[str, Vertex] = {}
        for v in vertices:
            if v.name in self.vertices:
                raise InvalidGraph(f"duplicate vertex name {v.name!r}")
            self.vertices[v.name] = v
        self.edges = list(edges)
        self.out_edges: dict[str, list[int]] = {name: [] for name in self.vertices}
        self.in_edges: dict[str, list[int]] = {name: [] for name in self.vertices}
        for idx, e in enumerate(self.edges):
            if e.source in self.out_edges:
                self.out_edges[e.source].append(idx)
            if e.target in self.in_edges:
                self.in_edges[e.target].append(idx)
        self.tokens: set[int] = set()
        self.terminal_reached = False
        self._validated = False
        self._initialized = False

    # --- structure ------------------------------------------------------------

    def start_vertex(self) -> Vertex | None:
        starts = [v for v in self.vertices.values() if v.kind == START]
        return starts[0] if len(starts) == 1 else None

    def defects(self, prefix: str = "") -> list[str]:
        out: list[str] = []
        where = prefix or "graph"
        starts = [v for v in self.vertices.values() if v.kind == START]
        terminals = [v for v in self.vertices.values() if v.kind == TERMINAL]
        if len(starts) != 1:
            out.append(f"{where}: expected exactly one start vertex, found {len(starts)}")
        if len(terminals) != 1:
            out.append(f"{where}: expected exactly one terminal vertex, found {len(terminals)}")
        for e in self.edges:
            for endpoint in (e.source, e.target):
                if endpoint not in self.vertices:
                    out.append(f"{where}: edge references unknown vertex {endpoint!r}")
        seen_edges: set[tuple[str, str, str | None]] = set()
        for e in self.edges:
            key = (e.source, e.target, e.label)
            if key in seen_edges:
                out.append(f"{where}: duplicate edge {e.source}->{e.target}")
            seen_edges.add(key)
        for v in self.vertices.values():
            outs = self.out_edges.get(v.name, [])
            ins = self.in_edges.get(v.name, [])
            if "/" in v.name or not v.name:
                out.append(f"{where}: vertex name {v.name!r} is not a valid path segment")
            if v.name == RESERVED_PATH_PREFIX:
                out.append(f"{where}: vertex name {v.name!r} is reserved")
            if v.kind == START:
                if len(outs) != 1:
                    out.append(f"{where}: start vertex {v.name!r} must have exactly one out-edge")
                if ins:
                    out.append(f"{where}: start vertex {v.name!r} must have no in-edges")
            elif v.kind == TERMINAL:
                if outs:
                    out.append(f"{where}: terminal vertex {v.name!r} must have no out-edges")
            elif v.kind in (ACTIVITY, COMPOSITE):
                if len(outs) != 1:
                    out.append(f"{where}: activity {v.name!r} must have exactly one out-edge")
            elif v.kind == AND_SPLIT:
                if len(outs) < 2:
                    out.append(f"{where}: and-split {v.name!r} needs at least two out-edges")
            elif v.kind == AND_JOIN:
                if len(ins) < 2:
                    out.append(f"{where}: and-join {v.name!r} needs at least two in-edges")
                if len(outs) != 1:
                    out.append(f"{where}: and-join {v.name!r} must have exactly one out-edge")
            elif v.kind == XOR_SPLIT:
                labels = [self.edges[i].label for i in outs]
                if len(outs) < 2:
                    out.append(f"{where}: xor-split {v.name!r} needs at least two out-edges")
                if any(label is None for label in labels):
                    out.append(f"{where}: xor-split {v.name!r} has unlabeled out-edges")
                if len(set(labels)) != len(labels):
                    out.append(f"{where}: xor-split {v.name!r} has duplicate branch labels")
                if v.decision is None:
                    out.append(f"{where}: xor-split {v.name!r} has no decision script")
            elif v.kind == LOOP:
                labels = {self.edges[i].label for i in outs}
                if labels != {LOOP_AGAIN, LOOP_EXIT}:
                    out.append(f"{where}: loop {v.name!r} must have exactly "
                               f"'{LOOP_AGAIN}' and '{LOOP_EXIT}' out-edges")
                if v.decision is None:
                    out.append(f"{where}: loop {v.name!r} has no decision script")
            else:
                out.append(f"{where}: unknown vertex kind {v.kind!r}")
            if v.kind not in (XOR_SPLIT, LOOP):
                for i in outs:
                    if self.edges[i].label is not None:
                        out.append(f"{where}: edge from {v.name!r} carries a label "
                                   "but is not a decision branch")
        if len(starts) == 1:
            reachable = self._reachable(starts[0].name)
            for name in self.vertices:
                if name not in reachable:
                    out.append(f"{where}: vertex {name!r} unreachable from start")
        out.extend(self._split_join_defects(where))
        for v in self.vertices.values():
            if v.kind == COMPOSITE:
                if v.children is None:
                    out.append(f"{where}: composite {v.name!r} has no child graph")
                else:
                    child_prefix = f"{prefix}/{v.name}" if prefix else v.name
                    out.extend(v.children.defects(child_prefix))
        return out

    def _reachable(self, origin: str) -> set[str]:
        seen = {origin}
        stack = [origin]
        while stack:
            current = stack.pop()
            for i in self.out_edges.get(current, []):
                target = self.edges[i].target
                if target not in seen:
                    seen.add(target)
                    stack.append(target)
        return seen

    def _split_join_defects(self, where: str) -> list[str]:
        # Every and-split must have a join on which all of its branches converge.
        out = []
        for v in self.vertices.values():
            if v.kind != AND_SPLIT:
                continue
            if self._matching_join(v) is None:
                out.append(f"{where}: and-split {v.name!r} has no matching and-join")
        return out

    def _matching_join(self, split: Vertex) -> str | None:
        branch_joins: list[set[str]] = []
        for i in self.out_edges[split.name]:
            reach = self._reachable(self.edges[i].target)
            branch_joins.append({n for n in reach if self.vertices[n].kind == AND_JOIN})
        common = set.intersection(*branch_joins) if branch_joins else set()
        if not common:
            return None
        # Nearest common join by BFS distance from the split.
        distance: dict[str, int] = {split.name: 0}
        queue = [split.name]
        while queue:
            current = queue.pop(0)
            for i in self.out_edges.get(current, []):
                target = self.edges[i].target
                if target not in distance:
                    distance[target] = distance[current] + 1
                    queue.append(target)
        return min(common, key=lambda name: (distance.get(name, 1 << 30), name))

    def _assign_join_arities(self) -> None:
        for v in self.vertices.values():
            if v.kind == AND_SPLIT:
                join = self._matching_join(v)
                if join is not None:
                    self.vertices[join].join_arity = len(self.out_edges[v.name])
            if v.kind == COMPOSITE and v.children is not None:
                v.children._assign_join_arities()

    def validate(self) -> None:
        if self._validated:
            return
        found = self.defects()
        if found:
            raise InvalidGraph(defects=found)
        self._assign_join_arities()
        self._validated = True

    # --- runtime --------------------------------------------------------------

    def initialize(self, decider: Decider | None = None) -> None:
        """Place the initial token; cascades through control vertices."""
        self.validate()
        self.tokens.clear()
        self.terminal_reached = False
        self._initialized = True
        start = self.start_vertex()
        assert start is not None
        for i in self.out_edges[start.name]:
            self._flow(i, decider)

    def _ensure_initialized(self, decider: Decider | None = None) -> None:
        if not self._initialized:
            self.initialize(decider)

    def _flow(self, edge_index: int, decider: Decider | None) -> None:
        stack = [edge_index]
        while stack:
            idx = stack.pop()
            target = self.vertices[self.edges[idx].target]
            if target.kind == TERMINAL:
                self.tokens.add(idx)
                self.terminal_reached = True
            elif target.kind in (ACTIVITY,):
                self.tokens.add(idx)
            elif target.kind == COMPOSITE:
                self.tokens.add(idx)
                if target.state == ActivityState.WAITING:
                    target.state = ActivityState.STARTED
                    assert target.children is not None
                    target.children.initialize(decider)
                    if target.children.terminal_reached:
                        stack.extend(self._finish_composite(target))
            elif target.kind == AND_SPLIT:
                stack.extend(self.out_edges[target.name])
            elif target.kind == AND_JOIN:
                self.tokens.add(idx)
                ins = self.in_edges[target.name]
                held = [i for i in ins if i in self.tokens]
                arity = target.join_arity or len(ins)
                if len(held) >= arity:
                    for i in held:
                        self.tokens.discard(i)
                    stack.extend(self.out_edges[target.name])
            elif target.kind == XOR_SPLIT:
                stack.append(self._decide_branch(target, decider))
            elif target.kind == LOOP:
                label = self._decision_label(target, decider)
                if label == LOOP_AGAIN:
                    target.loop_count += 1
                    self._reset_loop_body(target)
                    stack.append(self._labeled_edge(target, LOOP_AGAIN))
                elif label == LOOP_EXIT:
                    stack.append(self._labeled_edge(target, LOOP_EXIT))
                else:
                    raise UnknownBranchLabel(
                        f"loop {target.name!r} decision returned {label!r}")
            else:
                raise InvalidGraph(f"token arrived at {target.kind} vertex {target.name!r}")

    def _decision_label(self, vertex: Vertex, decider: Decider | None) -> str:
        if decider is None:
            raise IllegalTransition(
                f"decision at {vertex.name!r} required but no decider supplied")
        return decider(vertex)

    def _labeled_edge(self, vertex: Vertex, label: str) -> int:
        for i in self.out_edges[vertex.name]:
            if self.edges[i].label == label:
                return i
        raise UnknownBranchLabel(f"vertex {vertex.name!r} has no branch {label!r}")

    def _decide_branch(self, vertex: Vertex, decider: Decider | None) -> int:
        label = self._decision_label(vertex, decider)
        for i in self.out_edges[vertex.name]:
            if self.edges[i].label == label:
                return i
        raise UnknownBranchLabel(f"xor-split {vertex.name!r} has no branch {label!r}")

    def _loop_body(self, vertex: Vertex) -> set[str]:
        entry = self.edges[self._labeled_edge(vertex, LOOP_AGAIN)].target
        seen: set[str] = set()
        stack = [entry]
        while stack:
            current = stack.pop()
            if current in seen or current == vertex.name:
                continue
            seen.add(current)
            for i in self.out_edges.get(current, []):
                stack.append(self.edges[i].target)
        return seen

    def _reset_loop_body(self, vertex: Vertex) -> None:
        body = self._loop_body(vertex)
        for name in body:
            v = self.vertices[name]
            if v.kind in (ACTIVITY, COMPOSITE):
                v.state = ActivityState.WAITING
            if v.kind == COMPOSITE and v.children is not None:
                v.children.reset()
            if v.kind == LOOP:
                v.loop_count = 0
        for idx, e in enumerate(self.edges):
            if e.target in body and idx in self.tokens:
                self.tokens.discard(idx)

    def reset(self) -> None:
        self.tokens.clear()
        self.terminal_reached = False
        self._initialized = False
        for v in self.vertices.values():
            if v.kind in (ACTIVITY, COMPOSITE):
                v.state = ActivityState.WAITING
            if v.kind == LOOP:
                v.loop_count = 0
            if v.kind == COMPOSITE and v.children is not None:
                v.children.reset()

    def _finish_composite(self, vertex: Vertex) -> list[int]:
        vertex.state = ActivityState.FINISHED
        for i in self.in_edges[vertex.name]:
            self.tokens.discard(i)
        return list(self.out_edges[vertex.name])

    # --- queries ----------------------------------------------------------------

    def find(self, path: str) -> tuple["WorkflowGraph", Vertex]:
        """Resolve an activity path like ``Assembly/Measure``."""
        segments = path.split("/")
        graph: WorkflowGraph = self
        for i, segment in enumerate(segments):
            vertex = graph.vertices.get(segment)
            if vertex is None:
                raise NoSuchActivity(f"no activity at path {path!r}")
            if i == len(segments) - 1:
                return graph, vertex
            if vertex.kind != COMPOSITE or vertex.children is None:
                raise NoSuchActivity(f"{segment!r} in {path!r} is not a composite")
            graph = vertex.children
        raise NoSuchActivity(f"no activity at path {path!r}")

    def enabled_activities(self, prefix: str = "") -> set[str]:
        """Paths of atomic activities whose predecessors' conditions are met."""
        self.validate()
        self._ensure_initialized()
        out: set[str] = set()
        for name, vertex in self.vertices.items():
            path = f"{prefix}/{name}" if prefix else name
            if vertex.kind == ACTIVITY:
                has_token = any(i in self.tokens for i in self.in_edges[name])
                if has_token and vertex.state != ActivityState.FINISHED:
                    out.add(path)
            elif vertex.kind == COMPOSITE and vertex.state == ActivityState.STARTED:
                assert vertex.children is not None
                out |= vertex.children.enabled_activities(path)
        return out

    def legal_transitions(self, path: str) -> set[str]:
        self.validate()
        self._ensure_initialized()
        graph, vertex = self.find(path)
        if vertex.kind != ACTIVITY:
            return set()
        if vertex.state == ActivityState.WAITING:
            has_token = any(i in graph.tokens for i in graph.in_edges[vertex.name])
            active = self._path_active(path)
            return {"Start"} if (has_token and active) else set()
        if vertex.state == ActivityState.STARTED:
            return {"Complete", "Suspend"}
        if vertex.state == ActivityState.SUSPENDED:
            return {"Resume"}
        return set()

    def _path_active(self, path: str) -> bool:
        # Every composite on the path must currently be running.
        segments = path.split("/")
        graph: WorkflowGraph = self
        for segment in segments[:-1]:
            vertex = graph.vertices[segment]
            if vertex.state != ActivityState.STARTED:
                return False
            assert vertex.children is not None
            graph = vertex.children
        return True

    def apply_transition(self, path: str, transition: str,
                         decider: Decider | None = None) -> None:
        """Apply a transition to the activity at ``path``; cascades control flow."""
        self.validate()
        self._ensure_initialized(decider)
        if transition not in TRANSITION_TABLE:
            raise IllegalTransition(f"unknown transition {transition!r}")
        if transition not in self.legal_transitions(path):
            raise IllegalTransition(
                f"transition {transition!r} not legal for {path!r}")
        self._apply(path.split("/"), transition, decider)

    def _apply(self, segments: list[str], transition: str, decider: Decider | None) -> None:
        head = segments[0]
        vertex = self.vertices[head]
        if len(segments) > 1:
            assert vertex.kind == COMPOSITE and vertex.children is not None
            vertex.children._apply(segments[1:], transition, decider)
            if vertex.children.terminal_reached and vertex.state != ActivityState.FINISHED:
                for i in self._finish_composite(vertex):
                    self._flow(i, decider)
            return
        vertex.state = TRANSITION_TABLE[transition][1]
        if transition == "Complete":
            for i in self.in_edges[head]:
                self.tokens.discard(i)
            for i in self.out_edges[head]:
                self._flow(i, decider)

    def state_snapshot(self, prefix: str = "") -> dict[str, str]:
        """Per-activity state plus loop counters, keyed by path."""
        out: dict[str, str] = {}
        for name, vertex in self.vertices.items():
            path = f"{prefix}/{name}" if prefix else name
            if vertex.kind in (ACTIVITY, COMPOSITE):
                out[path] = vertex.state.value
            if vertex.kind == LOOP:
                out[path] = f"loop:{vertex.loop_count}"
            if vertex.kind == COMPOSITE and vertex.children is not None:
                out.update(vertex.children.state_snapshot(path))
        if not prefix:
            out["@terminal"] = "reached" if self.terminal_reached else "pending"
        return out

    def all_activities(self, prefix: str = "") -> dict[str, Vertex]:
        out: dict[str, Vertex] = {}
        for name, vertex in self.vertices.items():
            path = f"{prefix}/{name}" if prefix else name
            if vertex.kind == ACTIVITY:
                out[path] = vertex
            elif vertex.kind == COMPOSITE and vertex.children is not None:
                out.update(vertex.children.all_activities(path))
        return out

    def clone(self) -> "WorkflowGraph":
        vertices = []
        for v in self.vertices.values():
            vertices.append(Vertex(
                name=v.name, kind=v.kind, outcome_schema=v.outcome_schema,
                roles=v.roles, scripts=v.scripts, properties=dict(v.properties),
                state=v.state,
                children=v.children.clone() if v.children is not None else None,
                decision=v.decision, loop_count=v.loop_count,
                join_arity=v.join_arity))
        clone = WorkflowGraph(vertices, self.edges)
        clone.tokens = set(self.tokens)
        clone.terminal_reached = self.terminal_reached
        clone._validated = self._validated
        clone._initialized = self._initialized
        return clone


def validate_graph(graph: WorkflowGraph) -> list[str]:
    """Structural defects; empty list means the graph is well-formed."""
    return graph.defects()


def enabled_activities(graph: WorkflowGraph) -> set[str]:
    return graph.enabled_activities()


def legal_transitions(graph: WorkflowGraph, path: str) -> set[str]:
    return graph.legal_transitions(path)


def apply_transition(graph: WorkflowGraph, path: str, transition: str,
                     decider: Decider | None = None) -> WorkflowGraph:
    graph.apply_transition(path, transition, decider)
    return graph


# --- construction helpers ----------------------------------------------------

def start(name: str = "start") -> Vertex:
    return Vertex(name=name, kind=START)


def terminal(name: str = "end") -> Vertex:
    return Vertex(name=name, kind=TERMINAL)


def atomic(name: str, outcome_schema: tuple[str, int] | None = None,
           roles: tuple[str, ...] = (), scripts: tuple[ScriptRef, ...] = (),
           properties: dict[str, str] | None = None) -> Vertex:
    return Vertex(name=name, kind=ACTIVITY, outcome_schema=outcome_schema,
                  roles=roles, scripts=scripts, properties=properties or {})


def composite(name: str, children: WorkflowGraph) -> Vertex:
    return Vertex(name=name, kind=COMPOSITE, children=children)


def and_split(name: str) -> Vertex:
    return Vertex(name=name, kind=AND_SPLIT)


def and_join(name: str) -> Vertex:
    return Vertex(name=name, kind=AND_JOIN)


def xor_split(name: str, decision: ScriptRef) -> Vertex:
    return Vertex(name=name, kind=XOR_SPLIT, decision=decision)


def loop(name: str, decision: ScriptRef) -> Vertex:
    return Vertex(name=name, kind=LOOP, decision=decision)


def linear(*activities: Vertex) -> WorkflowGraph:
    """start -> a1 -> a2 -> ... -> end."""
    vertices = [start(), *activities, terminal()]
    names = [v.name for v in vertices]
    edges = [Edge(names[i], names[i + 1]) for i in range(len(names) - 1)]
    return WorkflowGraph(vertices, edges)


# --- canonical structure serialization -----------------------------------------

def serialize_structure(graph: WorkflowGraph) -> ET.Element:
    """Structure only: no runtime state, so the creation-time copy stays stable."""
    root = elem("workflow")
    _serialize_into(root, graph)
    return root


def _serialize_into(parent: ET.Element, graph: WorkflowGraph) -> None:
    for vertex in graph.vertices.values():
        attrs = {"kind": vertex.kind.replace("_", "-"), "name": vertex.name}
        node = sub(parent, "vertex", attrs)
        if vertex.outcome_schema is not None:
            sub(node, "outcome-schema", {"name": vertex.outcome_schema[0],
                                         "version": str(vertex.outcome_schema[1])})
        for role in vertex.roles:
            sub(node, "role", text=role)
        for script in vertex.scripts:
            sub(node, "script", {"name": script.name, "version": str(script.version)})
        for key in sorted(vertex.properties):
            sub(node, "config", {"name": key, "value": vertex.properties[key]})
        if vertex.decision is not None:
            sub(node, "decision", {"name": vertex.decision.name,
                                   "version": str(vertex.decision.version)})
        if vertex.kind == COMPOSITE and vertex.children is not None:
            _serialize_into(sub(node, "graph"), vertex.children)
    for edge in graph.edges:
        attrs = {"from": edge.source, "to": edge.target}
        if edge.label is not None:
            attrs["label"] = edge.label
        sub(parent, "edge", attrs)


def deserialize_structure(root: ET.Element) -> WorkflowGraph:
    vertices: list[Vertex] = []
    edges: list[Edge] = []
    for node in root:
        if node.tag == "vertex":
            kind = node.get("kind", "").replace("-", "_")
            vertex = Vertex(name=node.get("name", ""), kind=kind)
            for child in node:
                if child.tag == "outcome-schema":
                    vertex.outcome_schema = (child.get("name", ""),
                                             int(child.get("version", "0")))
                elif child.tag == "role":
                    vertex.roles = vertex.roles + (child.text or "",)
                elif child.tag == "script":
                    vertex.scripts = vertex.scripts + (
                        ScriptRef(child.get("name", ""), int(child.get("version", "0"))),)
                elif child.tag == "config":
                    vertex.properties[child.get("name", "")] = child.get("value", "")
                elif child.tag == "decision":
                    vertex.decision = ScriptRef(child.get("name", ""),
                                                int(child.get("version", "0")))
                elif child.tag == "graph":
                    vertex.children = deserialize_structure(child)
            vertices.append(vertex)
        elif node.tag == "edge":
            edges.append(Edge(node.get("from", ""), node.get("to", ""), node.get("label")))
    return WorkflowGraph(vertices, edges)
