"""Script registry, engines, and bulk application.

Decision scripts use the builtin expression language and are pure: they
get read-only bindings and return a branch label. Activity scripts run
through a pluggable engine registry; every side effect they make goes
through the capability handle, which routes into the execution layer and
is therefore event-logged. Engines get no other way to touch storage.

Bundled engines:
  expr    the builtin expression language (pure, returns a value)
  python  host scripting via exec(); the namespace holds the declared
          inputs plus ``ctx`` (the capability handle); the script's
          ``output`` variable, if set, is its result
  kernel  named built-in functions (used by bootstrap descriptions,
          e.g. schema compilation on schema edits)
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Iterable, Protocol

from . import expr, xmlio
from .errors import EvaluationError, KernelError, NoEngine, NoSuchView, ScriptFailed, Unauthorized

if TYPE_CHECKING:
    from .items import Item
    from .workflow import Vertex

EXPR_LANGUAGE = "expr"


@dataclass(frozen=True)
class ScriptDefinition:
    name: str
    version: int
    language_tag: str
    source: str
    inputs: tuple[tuple[str, str], ...] = ()   # (name, semantic type)
    output: str = "value"


class CapabilityHandle(Protocol):
    """What a running script may do; implemented by the execution layer."""

    item_id: str
    activity_path: str

    def write_property(self, name: str, value: str) -> None: ...
    def add_member(self, collection: str, slot_id: int, target: str) -> None: ...
    def remove_member(self, collection: str, slot_id: int) -> None: ...
    def create_item(self, name: str, version: str = "last") -> str: ...
    def write_viewpoint(self, schema: str, view: str, event_id: int) -> None: ...
    def execute(self, activity_path: str, transition: str,
                outcome: bytes | None = None) -> None: ...
    def get_property(self, name: str) -> str | None: ...
    def resolve_view(self, schema: str, view: str) -> bytes: ...
    def collection_slots(self, name: str) -> list[tuple[int, str | None]]: ...
    def member_property(self, member_id: str, name: str) -> str | None: ...


@dataclass
class ScriptContext:
    """Everything a script sees: bound inputs plus the capability handle."""

    item_id: str
    activity_path: str
    inputs: dict[str, Any] = field(default_factory=dict)
    handle: CapabilityHandle | None = None


Engine = Callable[[ScriptDefinition, ScriptContext], Any]


class EngineRegistry:
    def __init__(self) -> None:
        self._engines: dict[str, Engine] = {}
        self._kernel_functions: dict[str, Callable[[ScriptContext], Any]] = {}
        self.register(EXPR_LANGUAGE, _expr_engine)
        self.register("python", _python_engine)
        self.register("kernel", self._kernel_engine)

    def register(self, language_tag: str, engine: Engine) -> None:
        self._engines[language_tag] = engine

    def register_kernel_function(self, name: str,
                                 fn: Callable[[ScriptContext], Any]) -> None:
        self._kernel_functions[name] = fn

    def engine_for(self, language_tag: str) -> Engine:
        engine = self._engines.get(language_tag)
        if engine is None:
            raise NoEngine(f"no engine registered for language {language_tag!r}")
        return engine

    def _kernel_engine(self, script: ScriptDefinition, context: ScriptContext) -> Any:
        fn = self._kernel_functions.get(script.source.strip())
        if fn is None:
            raise NoEngine(f"no kernel function {script.source.strip()!r}")
        return fn(context)


def _expr_engine(script: ScriptDefinition, context: ScriptContext) -> Any:
    return expr.evaluate(script.source, context.inputs)


def _python_engine(script: ScriptDefinition, context: ScriptContext) -> Any:
    namespace: dict[str, Any] = dict(context.inputs)
    namespace["ctx"] = context.handle
    exec(compile(script.source, f"<script {script.name}>", "exec"), namespace)
    return namespace.get("output")


def evaluate_decision(script: ScriptDefinition, bindings: dict[str, Any]) -> str:
    """Evaluate a decision script to a branch label; pure by construction."""
    if script.language_tag != EXPR_LANGUAGE:
        raise EvaluationError(
            f"decision script {script.name!r} must use the builtin expression "
            f"language, not {script.language_tag!r}")
    value = expr.evaluate(script.source, bindings)
    return expr.branch_label(value)


def run_activity_script(script: ScriptDefinition, context: ScriptContext,
                        registry: EngineRegistry) -> Any:
    """Run one activity script; any raise becomes ScriptFailed for rollback."""
    engine = registry.engine_for(script.language_tag)
    try:
        return engine(script, context)
    except KernelError:
        raise
    except Exception as exc:
        raise ScriptFailed(f"script {script.name!r} v{script.version}: {exc}") from exc


class BulkExecutor(Protocol):
    def select_items(self, selector: str) -> list[str]: ...
    def run_script_on(self, item_id: str, script: ScriptDefinition, agent_id: str) -> Any: ...
    def is_maintainer(self, agent_id: str) -> bool: ...


def bulk_apply(script: ScriptDefinition, selector: str, agent_id: str,
               executor: BulkExecutor) -> list[dict[str, str]]:
    """Run a script independently per selected item; failures don't abort."""
    if not executor.is_maintainer(agent_id):
        raise Unauthorized(f"agent {agent_id!r} lacks the maintainer role")
    report: list[dict[str, str]] = []
    for item_id in executor.select_items(selector):
        entry = {"item": item_id, "status": "ok"}
        try:
            result = executor.run_script_on(item_id, script, agent_id)
            if result is not None:
                entry["result"] = str(result)
        except KernelError as exc:
            entry["status"] = "error"
            entry["code"] = exc.code
            entry["message"] = exc.message
        report.append(entry)
    return report


def iter_failures(report: Iterable[dict[str, str]]) -> list[dict[str, str]]:
    return [entry for entry in report if entry.get("status") != "ok"]


# --- script document codec ------------------------------------------------------

def script_definition_document(script: ScriptDefinition) -> ET.Element:
    root = xmlio.elem("script-def", {"language": script.language_tag, "name": script.name})
    for name, semantic in script.inputs:
        xmlio.sub(root, "input", {"name": name, "type": semantic})
    xmlio.sub(root, "output", {"type": script.output})
    xmlio.sub(root, "source", text=script.source)
    return root


def parse_script_definition(data: bytes | str | ET.Element, name: str | None = None,
                            version: int = 0) -> ScriptDefinition:
    root = data if isinstance(data, ET.Element) else xmlio.parse_bytes(data)
    inputs = tuple((node.get("name", ""), node.get("type", ""))
                   for node in root.findall("input"))
    output_node = root.find("output")
    return ScriptDefinition(
        name=name or root.get("name", ""),
        version=version,
        language_tag=root.get("language", EXPR_LANGUAGE),
        source=xmlio.child_text(root, "source", "") or "",
        inputs=inputs,
        output=output_node.get("type", "value") if output_node is not None else "value",
    )


ScriptLoader = Callable[[str, int], ScriptDefinition]


def make_decider(script_loader: ScriptLoader, item: "Item", submitted: bytes | None):
    """Decision callback for workflow control vertices; pure over item state."""

    def decide(vertex: "Vertex") -> str:
        from .errors import DecisionScriptFailed
        assert vertex.decision is not None
        try:
            script = script_loader(vertex.decision.name, vertex.decision.version)
            bindings = build_bindings(script, item, vertex, submitted)
            return evaluate_decision(script, bindings)
        except KernelError as exc:
            raise DecisionScriptFailed(
                f"decision {vertex.decision.name!r} at {vertex.name!r}: "
                f"{exc.message}") from exc

    return decide


# --- input binding ---------------------------------------------------------------

def build_bindings(script: ScriptDefinition, item: "Item", vertex: "Vertex | None",
                   submitted: bytes | None) -> dict[str, Any]:
    """Bind a script's declared inputs from item state.

    Semantic types: ``outcome`` (submitted document as a DocView),
    ``document`` (submitted document bytes), ``property:<name>``,
    ``viewpoint:<schema>:<view>`` (resolved document as a DocView),
    ``loopcount`` (the deciding loop vertex's iteration counter).
    """
    from .items import resolve_viewpoint

    bindings: dict[str, Any] = {}
    for input_name, semantic in script.inputs:
        if semantic == "outcome":
            if submitted is None:
                raise EvaluationError(
                    f"input {input_name!r} needs a submitted outcome, none present")
            bindings[input_name] = expr.doc_view(submitted)
        elif semantic == "document":
            if submitted is None:
                raise EvaluationError(
                    f"input {input_name!r} needs a submitted document, none present")
            bindings[input_name] = submitted
        elif semantic.startswith("property:"):
            bindings[input_name] = item.property_value(semantic.split(":", 1)[1], "")
        elif semantic.startswith("viewpoint:"):
            _, schema_name, view = semantic.split(":", 2)
            try:
                outcome = resolve_viewpoint(item, schema_name, view)
            except NoSuchView as exc:
                raise EvaluationError(exc.message) from exc
            bindings[input_name] = expr.doc_view(outcome.document)
        elif semantic == "loopcount":
            bindings[input_name] = vertex.loop_count if vertex is not None else 0
        else:
            raise EvaluationError(
                f"input {input_name!r} has unknown semantic type {semantic!r}")
    return bindings
