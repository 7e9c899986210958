"""XML Schema subset compiler and document validator.

Supported subset (mirrored by the web client's form generator):
  - top-level xs:element declarations; the document root must match one
  - xs:complexType with one xs:sequence of xs:element / xs:choice / xs:any
    particles plus xs:attribute declarations
  - xs:simpleContent/xs:extension for text elements carrying attributes
  - xs:element @ref to a top-level declaration (enables recursion)
  - xs:simpleType/xs:restriction facets: enumeration, pattern,
    minInclusive, maxInclusive, minExclusive, maxExclusive,
    minLength, maxLength
  - occurrence bounds via minOccurs / maxOccurs (or "unbounded")
  - builtin types: string, token, anyURI, integer, int, long, decimal,
    double, float, boolean, date, dateTime

Validation returns a list of human-readable violations, each prefixed
with the location of the offending node as a slash path with 1-based
sibling indices (e.g. ``/run/sample[2]/value``). An empty list means the
document is valid.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .errors import MalformedSchema
from .xmlio import try_parse

XSD_NS = "http://www.w3.org/2001/XMLSchema"

_NUMERIC = {"integer", "int", "long", "decimal", "double", "float"}
_BUILTINS = _NUMERIC | {"string", "token", "anyURI", "boolean", "date", "dateTime"}

_DATE_RE = re.compile(r"\d{4}-\d{2}-\d{2}")
_DATETIME_RE = re.compile(r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}:\d{2})?")


def _local(tag: str) -> str:
    if tag.startswith("{"):
        uri, _, name = tag[1:].partition("}")
        if uri != XSD_NS:
            raise MalformedSchema(f"foreign namespace {uri!r} in schema")
        return name
    return tag


def _doc_local(tag: str) -> str:
    # Instance documents are matched on local names; the kernel's own
    # documents carry no namespaces, schema documents (validated against
    # the bundled meta-schema) do.
    return tag.rpartition("}")[2]


def _local_type(name: str) -> str:
    # Accept xs:integer / xsd:integer / integer.
    return name.split(":", 1)[-1]


@dataclass
class SimpleType:
    base: str = "string"
    enumeration: list[str] | None = None
    pattern: str | None = None
    min_inclusive: float | None = None
    max_inclusive: float | None = None
    min_exclusive: float | None = None
    max_exclusive: float | None = None
    min_length: int | None = None
    max_length: int | None = None


@dataclass
class AttributeDecl:
    name: str
    type: SimpleType
    required: bool = False


@dataclass
class Particle:
    kind: str  # "element" | "choice" | "any"
    min_occurs: int = 1
    max_occurs: int | None = 1  # None = unbounded
    element: "ElementDecl | None" = None
    ref: str | None = None
    options: list["Particle"] = field(default_factory=list)


@dataclass
class ComplexType:
    particles: list[Particle] = field(default_factory=list)
    attributes: list[AttributeDecl] = field(default_factory=list)
    simple: SimpleType | None = None  # simpleContent


@dataclass
class ElementDecl:
    name: str
    complex: ComplexType | None = None
    simple: SimpleType | None = None  # None with complex=None means anyType-ish string


@dataclass
class Schema:
    roots: dict[str, ElementDecl]

    def element(self, name: str) -> ElementDecl:
        return self.roots[name]


def _occurs(node: ET.Element) -> tuple[int, int | None]:
    try:
        lo = int(node.get("minOccurs", "1"))
    except ValueError:
        raise MalformedSchema(f"bad minOccurs {node.get('minOccurs')!r}") from None
    hi_raw = node.get("maxOccurs", "1")
    if hi_raw == "unbounded":
        hi: int | None = None
    else:
        try:
            hi = int(hi_raw)
        except ValueError:
            raise MalformedSchema(f"bad maxOccurs {hi_raw!r}") from None
    if lo < 0 or (hi is not None and hi < lo):
        raise MalformedSchema(f"inconsistent occurs [{lo},{hi_raw}]")
    return lo, hi


def _compile_simple(node: ET.Element) -> SimpleType:
    restriction = None
    for child in node:
        if _local(child.tag) == "restriction":
            restriction = child
            break
    if restriction is None:
        raise MalformedSchema("xs:simpleType requires xs:restriction")
    base = _local_type(restriction.get("base", "string"))
    if base not in _BUILTINS:
        raise MalformedSchema(f"unsupported restriction base {base!r}")
    st = SimpleType(base=base)
    for facet in restriction:
        kind = _local(facet.tag)
        value = facet.get("value")
        if value is None:
            raise MalformedSchema(f"facet {kind} without value")
        if kind == "enumeration":
            st.enumeration = (st.enumeration or [])
            st.enumeration.append(value)
        elif kind == "pattern":
            try:
                re.compile(value)
            except re.error as exc:
                raise MalformedSchema(f"bad pattern {value!r}: {exc}") from None
            st.pattern = value
        elif kind in ("minInclusive", "maxInclusive", "minExclusive", "maxExclusive"):
            if base not in _NUMERIC:
                raise MalformedSchema(f"{kind} facet on non-numeric base {base!r}")
            try:
                number = float(value)
            except ValueError:
                raise MalformedSchema(f"non-numeric {kind} facet {value!r}") from None
            setattr(st, re.sub(r"(?<!^)(?=[A-Z])", "_", kind).lower(), number)
        elif kind in ("minLength", "maxLength"):
            try:
                setattr(st, "min_length" if kind == "minLength" else "max_length", int(value))
            except ValueError:
                raise MalformedSchema(f"non-integer {kind} facet {value!r}") from None
        else:
            raise MalformedSchema(f"unsupported facet xs:{kind}")
    return st


def _compile_attribute(node: ET.Element) -> AttributeDecl:
    name = node.get("name")
    if not name:
        raise MalformedSchema("xs:attribute requires a name")
    declared = node.get("type")
    if declared is not None:
        base = _local_type(declared)
        if base not in _BUILTINS:
            raise MalformedSchema(f"unsupported attribute type {declared!r}")
        st = SimpleType(base=base)
    else:
        inline = [c for c in node if _local(c.tag) == "simpleType"]
        st = _compile_simple(inline[0]) if inline else SimpleType()
    return AttributeDecl(name=name, type=st, required=node.get("use") == "required")


def _compile_complex(node: ET.Element) -> ComplexType:
    ct = ComplexType()
    for child in node:
        kind = _local(child.tag)
        if kind == "sequence":
            for member in child:
                ct.particles.append(_compile_particle(member))
        elif kind == "choice":
            ct.particles.append(_compile_particle(child))
        elif kind == "attribute":
            ct.attributes.append(_compile_attribute(child))
        elif kind == "simpleContent":
            extensions = [g for g in child if _local(g.tag) == "extension"]
            if not extensions:
                raise MalformedSchema("xs:simpleContent requires xs:extension")
            ext = extensions[0]
            base = _local_type(ext.get("base", "string"))
            if base not in _BUILTINS:
                raise MalformedSchema(f"unsupported simpleContent base {base!r}")
            ct.simple = SimpleType(base=base)
            for attr in ext:
                if _local(attr.tag) == "attribute":
                    ct.attributes.append(_compile_attribute(attr))
        elif kind == "annotation":
            continue
        else:
            raise MalformedSchema(f"unsupported construct xs:{kind} in complexType")
    if ct.simple is not None and ct.particles:
        raise MalformedSchema("simpleContent cannot carry child particles")
    return ct


def _compile_particle(node: ET.Element) -> Particle:
    kind = _local(node.tag)
    lo, hi = _occurs(node)
    if kind == "element":
        ref = node.get("ref")
        if ref is not None:
            return Particle(kind="element", min_occurs=lo, max_occurs=hi, ref=_local_type(ref))
        return Particle(kind="element", min_occurs=lo, max_occurs=hi,
                        element=_compile_element(node))
    if kind == "choice":
        options = [_compile_particle(member) for member in node]
        if not options:
            raise MalformedSchema("empty xs:choice")
        return Particle(kind="choice", min_occurs=lo, max_occurs=hi, options=options)
    if kind == "any":
        return Particle(kind="any", min_occurs=lo, max_occurs=hi)
    if kind == "annotation":
        raise MalformedSchema("xs:annotation is not a particle")
    raise MalformedSchema(f"unsupported particle xs:{kind}")


def _compile_element(node: ET.Element) -> ElementDecl:
    name = node.get("name")
    if not name:
        raise MalformedSchema("xs:element requires a name")
    declared = node.get("type")
    if declared is not None:
        base = _local_type(declared)
        if base not in _BUILTINS:
            raise MalformedSchema(f"unsupported element type {declared!r}")
        return ElementDecl(name=name, simple=SimpleType(base=base))
    decl = ElementDecl(name=name)
    for child in node:
        kind = _local(child.tag)
        if kind == "complexType":
            decl.complex = _compile_complex(child)
        elif kind == "simpleType":
            decl.simple = _compile_simple(child)
        elif kind == "annotation":
            continue
        else:
            raise MalformedSchema(f"unsupported construct xs:{kind} in element")
    if decl.complex is None and decl.simple is None:
        decl.simple = SimpleType()  # untyped element: any text
    return decl


def parse_schema(document: bytes | str) -> Schema:
    """Compile a schema document; raises MalformedSchema."""
    root = try_parse(document)
    if root is None:
        raise MalformedSchema("schema document is not well-formed XML")
    if _local(root.tag) != "schema":
        raise MalformedSchema(f"root element is <{root.tag}>, expected xs:schema")
    roots: dict[str, ElementDecl] = {}
    for child in root:
        kind = _local(child.tag)
        if kind == "annotation":
            continue
        if kind != "element":
            raise MalformedSchema(f"unsupported top-level construct xs:{kind}")
        decl = _compile_element(child)
        if decl.name in roots:
            raise MalformedSchema(f"duplicate top-level element {decl.name!r}")
        roots[decl.name] = decl
    if not roots:
        raise MalformedSchema("schema declares no elements")
    schema = Schema(roots=roots)
    _check_refs(schema)
    return schema


def _check_refs(schema: Schema) -> None:
    def walk(particles: list[Particle]) -> None:
        for p in particles:
            if p.kind == "element" and p.ref is not None:
                if p.ref not in schema.roots:
                    raise MalformedSchema(f"element ref {p.ref!r} has no declaration")
            elif p.kind == "element" and p.element and p.element.complex:
                walk(p.element.complex.particles)
            elif p.kind == "choice":
                walk(p.options)

    for decl in schema.roots.values():
        if decl.complex:
            walk(decl.complex.particles)


# --- validation -----------------------------------------------------------------

def _check_value(st: SimpleType, raw: str, where: str, out: list[str]) -> None:
    value = raw.strip()
    base = st.base
    number: float | None = None
    if base in _NUMERIC:
        try:
            number = float(value)
            if base in ("integer", "int", "long") and not float(value).is_integer():
                raise ValueError
            if base in ("integer", "int", "long"):
                int(value)
        except ValueError:
            out.append(f"{where}: value {value!r} is not a valid {base}")
            return
    elif base == "boolean":
        if value not in ("true", "false", "0", "1"):
            out.append(f"{where}: value {value!r} is not a valid boolean")
            return
    elif base == "date":
        if not _DATE_RE.fullmatch(value):
            out.append(f"{where}: value {value!r} is not a valid date")
            return
    elif base == "dateTime":
        if not _DATETIME_RE.fullmatch(value):
            out.append(f"{where}: value {value!r} is not a valid dateTime")
            return
    if st.enumeration is not None and value not in st.enumeration:
        out.append(f"{where}: value {value!r} not in enumeration {st.enumeration}")
    if st.pattern is not None and not re.fullmatch(st.pattern, value):
        out.append(f"{where}: value {value!r} does not match pattern {st.pattern!r}")
    if number is not None:
        if st.min_inclusive is not None and number < st.min_inclusive:
            out.append(f"{where}: value {value} below minimum {st.min_inclusive}")
        if st.max_inclusive is not None and number > st.max_inclusive:
            out.append(f"{where}: value {value} above maximum {st.max_inclusive}")
        if st.min_exclusive is not None and number <= st.min_exclusive:
            out.append(f"{where}: value {value} not above exclusive minimum {st.min_exclusive}")
        if st.max_exclusive is not None and number >= st.max_exclusive:
            out.append(f"{where}: value {value} not below exclusive maximum {st.max_exclusive}")
    if st.min_length is not None and len(value) < st.min_length:
        out.append(f"{where}: length {len(value)} below minLength {st.min_length}")
    if st.max_length is not None and len(value) > st.max_length:
        out.append(f"{where}: length {len(value)} above maxLength {st.max_length}")


def _particle_tags(schema: Schema, particle: Particle) -> set[str]:
    if particle.kind == "element":
        return {particle.ref if particle.ref else particle.element.name}  # type: ignore[union-attr]
    if particle.kind == "choice":
        tags: set[str] = set()
        for option in particle.options:
            tags |= _particle_tags(schema, option)
        return tags
    return set()  # any


def _resolve(schema: Schema, particle: Particle) -> ElementDecl:
    if particle.ref is not None:
        return schema.roots[particle.ref]
    assert particle.element is not None
    return particle.element


def _validate_children(schema: Schema, ct: ComplexType, node: ET.Element,
                       where: str, out: list[str]) -> None:
    children = list(node)
    position = 0
    seen_counts: dict[str, int] = {}

    def loc(child: ET.Element) -> str:
        tag = child.tag
        seen_counts[tag] = seen_counts.get(tag, 0) + 1
        if sum(1 for c in children if c.tag == tag) > 1:
            return f"{where}/{tag}[{seen_counts[tag]}]"
        return f"{where}/{tag}"

    for particle in ct.particles:
        taken = 0
        while position < len(children) and (particle.max_occurs is None or taken < particle.max_occurs):
            child = children[position]
            if particle.kind == "any":
                # An unbounded wildcard absorbs the remainder.
                position += 1
                taken += 1
                continue
            tags = _particle_tags(schema, particle)
            if _doc_local(child.tag) not in tags:
                break
            position += 1
            taken += 1
            if particle.kind == "choice":
                option = next(o for o in particle.options if _doc_local(child.tag) in _particle_tags(schema, o))
                _validate_element(schema, _resolve(schema, option), child, loc(child), out)
            else:
                _validate_element(schema, _resolve(schema, particle), child, loc(child), out)
        if taken < particle.min_occurs:
            if particle.kind == "any":
                out.append(f"{where}: expected at least {particle.min_occurs} more element(s)")
            else:
                names = " | ".join(sorted(_particle_tags(schema, particle)))
                out.append(f"{where}: missing required element <{names}> "
                           f"(found {taken}, need {particle.min_occurs})")
    for child in children[position:]:
        out.append(f"{loc(child)}: unexpected element")
    if node.text and node.text.strip():
        out.append(f"{where}: unexpected text content {node.text.strip()!r}")


def _validate_attributes(ct: ComplexType, node: ET.Element, where: str, out: list[str]) -> None:
    declared = {a.name: a for a in ct.attributes}
    for name, raw in node.attrib.items():
        decl = declared.get(name)
        if decl is None:
            out.append(f"{where}: unexpected attribute '{name}'")
        else:
            _check_value(decl.type, raw, f"{where}@{name}", out)
    for name, decl in declared.items():
        if decl.required and name not in node.attrib:
            out.append(f"{where}: missing required attribute '{name}'")


def _validate_element(schema: Schema, decl: ElementDecl, node: ET.Element,
                      where: str, out: list[str]) -> None:
    if decl.complex is not None:
        ct = decl.complex
        _validate_attributes(ct, node, where, out)
        if ct.simple is not None:
            if len(node):
                out.append(f"{where}: unexpected child elements in text-only element")
            _check_value(ct.simple, node.text or "", where, out)
        else:
            _validate_children(schema, ct, node, where, out)
    else:
        assert decl.simple is not None
        if node.attrib:
            out.append(f"{where}: unexpected attribute(s) {sorted(node.attrib)}")
        if len(node):
            out.append(f"{where}: unexpected child elements in simple element")
        else:
            _check_value(decl.simple, node.text or "", where, out)


def validate_document(schema: Schema, document: bytes | str) -> list[str]:
    """Validate a document; empty list means valid."""
    root = try_parse(document)
    if root is None:
        return ["/: document is not well-formed XML"]
    decl = schema.roots.get(_doc_local(root.tag))
    if decl is None:
        return [f"/{root.tag}: no declaration for root element "
                f"(expected one of {sorted(schema.roots)})"]
    out: list[str] = []
    _validate_element(schema, decl, root, f"/{root.tag}", out)
    return out
