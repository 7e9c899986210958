/**
 * XML Schema subset compiler and validator, verdict-compatible with the
 * server: the same constructs (top-level elements, one sequence of
 * element/choice/any particles, attributes, simpleContent, element refs,
 * restriction facets, occurrence bounds) and the same accept/reject
 * decisions. Locations and message wording follow the server closely but
 * only the verdict is contractual.
 */

import { XmlElement, localName, tryParseXml } from "./xml.js";

export class MalformedSchema extends Error {}

const NUMERIC = new Set(["integer", "int", "long", "decimal", "double", "float"]);
const BUILTINS = new Set([
  ...NUMERIC, "string", "token", "anyURI", "boolean", "date", "dateTime",
]);

const DATE_RE = /^\d{4}-\d{2}-\d{2}$/;
const DATETIME_RE = /^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}:\d{2})?$/;
const INTEGER_RE = /^[+-]?\d+$/;
const FLOAT_RE = /^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$/;

export interface SimpleType {
  base: string;
  enumeration?: string[];
  pattern?: string;
  minInclusive?: number;
  maxInclusive?: number;
  minExclusive?: number;
  maxExclusive?: number;
  minLength?: number;
  maxLength?: number;
}

export interface AttributeDecl {
  name: string;
  type: SimpleType;
  required: boolean;
}

export interface Particle {
  kind: "element" | "choice" | "any";
  minOccurs: number;
  maxOccurs: number | null; // null = unbounded
  element?: ElementDecl;
  ref?: string;
  options: Particle[];
}

export interface ComplexType {
  particles: Particle[];
  attributes: AttributeDecl[];
  simple?: SimpleType; // simpleContent
}

export interface ElementDecl {
  name: string;
  complex?: ComplexType;
  simple?: SimpleType;
}

export interface Schema {
  roots: Record<string, ElementDecl>;
}

function schemaLocal(tag: string): string {
  return localName(tag);
}

function localType(name: string): string {
  const parts = name.split(":");
  return parts[parts.length - 1] ?? name;
}

function occurs(node: XmlElement): { min: number; max: number | null } {
  const minRaw = node.attributes["minOccurs"] ?? "1";
  const maxRaw = node.attributes["maxOccurs"] ?? "1";
  const min = Number.parseInt(minRaw, 10);
  if (Number.isNaN(min)) throw new MalformedSchema(`bad minOccurs '${minRaw}'`);
  let max: number | null;
  if (maxRaw === "unbounded") {
    max = null;
  } else {
    max = Number.parseInt(maxRaw, 10);
    if (Number.isNaN(max)) throw new MalformedSchema(`bad maxOccurs '${maxRaw}'`);
  }
  if (min < 0 || (max !== null && max < min)) {
    throw new MalformedSchema(`inconsistent occurs [${min},${maxRaw}]`);
  }
  return { min, max };
}

function compileSimple(node: XmlElement): SimpleType {
  const restriction = node.children.find((c) => schemaLocal(c.tag) === "restriction");
  if (!restriction) throw new MalformedSchema("xs:simpleType requires xs:restriction");
  const base = localType(restriction.attributes["base"] ?? "string");
  if (!BUILTINS.has(base)) {
    throw new MalformedSchema(`unsupported restriction base '${base}'`);
  }
  const st: SimpleType = { base };
  for (const facet of restriction.children) {
    const kind = schemaLocal(facet.tag);
    const value = facet.attributes["value"];
    if (value === undefined) throw new MalformedSchema(`facet ${kind} without value`);
    switch (kind) {
      case "enumeration":
        (st.enumeration ??= []).push(value);
        break;
      case "pattern":
        try {
          new RegExp(value);
        } catch (error) {
          throw new MalformedSchema(`bad pattern '${value}': ${error}`);
        }
        st.pattern = value;
        break;
      case "minInclusive":
      case "maxInclusive":
      case "minExclusive":
      case "maxExclusive": {
        if (!NUMERIC.has(base)) {
          throw new MalformedSchema(`${kind} facet on non-numeric base '${base}'`);
        }
        const parsed = Number.parseFloat(value);
        if (Number.isNaN(parsed)) {
          throw new MalformedSchema(`non-numeric ${kind} facet '${value}'`);
        }
        st[kind as "minInclusive"] = parsed;
        break;
      }
      case "minLength":
      case "maxLength": {
        const parsed = Number.parseInt(value, 10);
        if (Number.isNaN(parsed)) {
          throw new MalformedSchema(`non-integer ${kind} facet '${value}'`);
        }
        st[kind as "minLength"] = parsed;
        break;
      }
      default:
        throw new MalformedSchema(`unsupported facet xs:${kind}`);
    }
  }
  return st;
}

function compileAttribute(node: XmlElement): AttributeDecl {
  const name = node.attributes["name"];
  if (!name) throw new MalformedSchema("xs:attribute requires a name");
  const declared = node.attributes["type"];
  let type: SimpleType;
  if (declared !== undefined) {
    const base = localType(declared);
    if (!BUILTINS.has(base)) {
      throw new MalformedSchema(`unsupported attribute type '${declared}'`);
    }
    type = { base };
  } else {
    const inline = node.children.find((c) => schemaLocal(c.tag) === "simpleType");
    type = inline ? compileSimple(inline) : { base: "string" };
  }
  return { name, type, required: node.attributes["use"] === "required" };
}

function compileComplex(node: XmlElement): ComplexType {
  const ct: ComplexType = { particles: [], attributes: [] };
  for (const child of node.children) {
    const kind = schemaLocal(child.tag);
    if (kind === "sequence") {
      for (const member of child.children) ct.particles.push(compileParticle(member));
    } else if (kind === "choice") {
      ct.particles.push(compileParticle(child));
    } else if (kind === "attribute") {
      ct.attributes.push(compileAttribute(child));
    } else if (kind === "simpleContent") {
      const ext = child.children.find((c) => schemaLocal(c.tag) === "extension");
      if (!ext) throw new MalformedSchema("xs:simpleContent requires xs:extension");
      const base = localType(ext.attributes["base"] ?? "string");
      if (!BUILTINS.has(base)) {
        throw new MalformedSchema(`unsupported simpleContent base '${base}'`);
      }
      ct.simple = { base };
      for (const attr of ext.children) {
        if (schemaLocal(attr.tag) === "attribute") {
          ct.attributes.push(compileAttribute(attr));
        }
      }
    } else if (kind === "annotation") {
      continue;
    } else {
      throw new MalformedSchema(`unsupported construct xs:${kind} in complexType`);
    }
  }
  if (ct.simple && ct.particles.length > 0) {
    throw new MalformedSchema("simpleContent cannot carry child particles");
  }
  return ct;
}

function compileParticle(node: XmlElement): Particle {
  const kind = schemaLocal(node.tag);
  const { min, max } = occurs(node);
  if (kind === "element") {
    const ref = node.attributes["ref"];
    if (ref !== undefined) {
      return { kind: "element", minOccurs: min, maxOccurs: max,
               ref: localType(ref), options: [] };
    }
    return { kind: "element", minOccurs: min, maxOccurs: max,
             element: compileElement(node), options: [] };
  }
  if (kind === "choice") {
    const options = node.children.map(compileParticle);
    if (options.length === 0) throw new MalformedSchema("empty xs:choice");
    return { kind: "choice", minOccurs: min, maxOccurs: max, options };
  }
  if (kind === "any") {
    return { kind: "any", minOccurs: min, maxOccurs: max, options: [] };
  }
  throw new MalformedSchema(`unsupported particle xs:${kind}`);
}

function compileElement(node: XmlElement): ElementDecl {
  const name = node.attributes["name"];
  if (!name) throw new MalformedSchema("xs:element requires a name");
  const declared = node.attributes["type"];
  if (declared !== undefined) {
    const base = localType(declared);
    if (!BUILTINS.has(base)) {
      throw new MalformedSchema(`unsupported element type '${declared}'`);
    }
    return { name, simple: { base } };
  }
  const decl: ElementDecl = { name };
  for (const child of node.children) {
    const kind = schemaLocal(child.tag);
    if (kind === "complexType") decl.complex = compileComplex(child);
    else if (kind === "simpleType") decl.simple = compileSimple(child);
    else if (kind !== "annotation") {
      throw new MalformedSchema(`unsupported construct xs:${kind} in element`);
    }
  }
  if (!decl.complex && !decl.simple) decl.simple = { base: "string" };
  return decl;
}

export function parseSchema(document: string): Schema {
  const root = tryParseXml(document);
  if (!root) throw new MalformedSchema("schema document is not well-formed XML");
  if (schemaLocal(root.tag) !== "schema") {
    throw new MalformedSchema(`root element is <${root.tag}>, expected xs:schema`);
  }
  const roots: Record<string, ElementDecl> = {};
  for (const child of root.children) {
    const kind = schemaLocal(child.tag);
    if (kind === "annotation") continue;
    if (kind !== "element") {
      throw new MalformedSchema(`unsupported top-level construct xs:${kind}`);
    }
    const decl = compileElement(child);
    if (roots[decl.name]) {
      throw new MalformedSchema(`duplicate top-level element '${decl.name}'`);
    }
    roots[decl.name] = decl;
  }
  if (Object.keys(roots).length === 0) {
    throw new MalformedSchema("schema declares no elements");
  }
  const schema = { roots };
  checkRefs(schema);
  return schema;
}

function checkRefs(schema: Schema): void {
  const walk = (particles: Particle[]): void => {
    for (const p of particles) {
      if (p.kind === "element" && p.ref !== undefined) {
        if (!schema.roots[p.ref]) {
          throw new MalformedSchema(`element ref '${p.ref}' has no declaration`);
        }
      } else if (p.kind === "element" && p.element?.complex) {
        walk(p.element.complex.particles);
      } else if (p.kind === "choice") {
        walk(p.options);
      }
    }
  };
  for (const decl of Object.values(schema.roots)) {
    if (decl.complex) walk(decl.complex.particles);
  }
}

// --- validation -----------------------------------------------------------------

function pythonFloat(value: string): number | null {
  // Mirrors the server's numeric acceptance for the supported value space.
  const v = value.trim();
  if (FLOAT_RE.test(v)) return Number.parseFloat(v);
  if (/^[+-]?inf(inity)?$/i.test(v)) return v.startsWith("-") ? -Infinity : Infinity;
  return null;
}

function checkValue(st: SimpleType, raw: string, where: string, out: string[]): void {
  const value = raw.trim();
  const base = st.base;
  let num: number | null = null;
  if (NUMERIC.has(base)) {
    num = pythonFloat(value);
    const integerFamily = base === "integer" || base === "int" || base === "long";
    if (num === null || (integerFamily && !INTEGER_RE.test(value))) {
      out.push(`${where}: value '${value}' is not a valid ${base}`);
      return;
    }
  } else if (base === "boolean") {
    if (!["true", "false", "0", "1"].includes(value)) {
      out.push(`${where}: value '${value}' is not a valid boolean`);
      return;
    }
  } else if (base === "date") {
    if (!DATE_RE.test(value)) {
      out.push(`${where}: value '${value}' is not a valid date`);
      return;
    }
  } else if (base === "dateTime") {
    if (!DATETIME_RE.test(value)) {
      out.push(`${where}: value '${value}' is not a valid dateTime`);
      return;
    }
  }
  if (st.enumeration && !st.enumeration.includes(value)) {
    out.push(`${where}: value '${value}' not in enumeration`);
  }
  if (st.pattern !== undefined) {
    const anchored = new RegExp(`^(?:${st.pattern})$`);
    if (!anchored.test(value)) {
      out.push(`${where}: value '${value}' does not match pattern '${st.pattern}'`);
    }
  }
  if (num !== null) {
    if (st.minInclusive !== undefined && num < st.minInclusive) {
      out.push(`${where}: value ${value} below minimum ${st.minInclusive}`);
    }
    if (st.maxInclusive !== undefined && num > st.maxInclusive) {
      out.push(`${where}: value ${value} above maximum ${st.maxInclusive}`);
    }
    if (st.minExclusive !== undefined && num <= st.minExclusive) {
      out.push(`${where}: value ${value} not above exclusive minimum ${st.minExclusive}`);
    }
    if (st.maxExclusive !== undefined && num >= st.maxExclusive) {
      out.push(`${where}: value ${value} not below exclusive maximum ${st.maxExclusive}`);
    }
  }
  if (st.minLength !== undefined && value.length < st.minLength) {
    out.push(`${where}: length ${value.length} below minLength ${st.minLength}`);
  }
  if (st.maxLength !== undefined && value.length > st.maxLength) {
    out.push(`${where}: length ${value.length} above maxLength ${st.maxLength}`);
  }
}

function particleTags(schema: Schema, particle: Particle): Set<string> {
  if (particle.kind === "element") {
    return new Set([particle.ref ?? particle.element!.name]);
  }
  if (particle.kind === "choice") {
    const tags = new Set<string>();
    for (const option of particle.options) {
      for (const tag of particleTags(schema, option)) tags.add(tag);
    }
    return tags;
  }
  return new Set();
}

function resolve(schema: Schema, particle: Particle): ElementDecl {
  if (particle.ref !== undefined) return schema.roots[particle.ref]!;
  return particle.element!;
}

function validateChildren(schema: Schema, ct: ComplexType, node: XmlElement,
                          where: string, out: string[]): void {
  const children = node.children;
  let position = 0;
  const seen: Record<string, number> = {};
  const loc = (child: XmlElement): string => {
    seen[child.tag] = (seen[child.tag] ?? 0) + 1;
    const siblings = children.filter((c) => c.tag === child.tag).length;
    return siblings > 1 ? `${where}/${child.tag}[${seen[child.tag]}]`
                        : `${where}/${child.tag}`;
  };
  for (const particle of ct.particles) {
    let taken = 0;
    while (position < children.length &&
           (particle.maxOccurs === null || taken < particle.maxOccurs)) {
      const child = children[position]!;
      if (particle.kind === "any") {
        position += 1;
        taken += 1;
        continue;
      }
      const tags = particleTags(schema, particle);
      if (!tags.has(localName(child.tag))) break;
      position += 1;
      taken += 1;
      if (particle.kind === "choice") {
        const option = particle.options.find((o) =>
          particleTags(schema, o).has(localName(child.tag)))!;
        validateElement(schema, resolve(schema, option), child, loc(child), out);
      } else {
        validateElement(schema, resolve(schema, particle), child, loc(child), out);
      }
    }
    if (taken < particle.minOccurs) {
      if (particle.kind === "any") {
        out.push(`${where}: expected at least ${particle.minOccurs} more element(s)`);
      } else {
        const names = [...particleTags(schema, particle)].sort().join(" | ");
        out.push(`${where}: missing required element <${names}> ` +
                 `(found ${taken}, need ${particle.minOccurs})`);
      }
    }
  }
  for (const child of children.slice(position)) {
    out.push(`${loc(child)}: unexpected element`);
  }
  if (node.text.trim() !== "") {
    out.push(`${where}: unexpected text content '${node.text.trim()}'`);
  }
}

function validateAttributes(ct: ComplexType, node: XmlElement, where: string,
                            out: string[]): void {
  const declared = new Map(ct.attributes.map((a) => [a.name, a]));
  for (const [name, raw] of Object.entries(node.attributes)) {
    const decl = declared.get(name);
    if (!decl) out.push(`${where}: unexpected attribute '${name}'`);
    else checkValue(decl.type, raw, `${where}@${name}`, out);
  }
  for (const decl of ct.attributes) {
    if (decl.required && !(decl.name in node.attributes)) {
      out.push(`${where}: missing required attribute '${decl.name}'`);
    }
  }
}

function validateElement(schema: Schema, decl: ElementDecl, node: XmlElement,
                         where: string, out: string[]): void {
  if (decl.complex) {
    validateAttributes(decl.complex, node, where, out);
    if (decl.complex.simple) {
      if (node.children.length > 0) {
        out.push(`${where}: unexpected child elements in text-only element`);
      }
      checkValue(decl.complex.simple, node.text, where, out);
    } else {
      validateChildren(schema, decl.complex, node, where, out);
    }
  } else {
    if (Object.keys(node.attributes).length > 0) {
      out.push(`${where}: unexpected attribute(s)`);
    }
    if (node.children.length > 0) {
      out.push(`${where}: unexpected child elements in simple element`);
    } else {
      checkValue(decl.simple!, node.text, where, out);
    }
  }
}

/** Empty list means the document is valid. */
export function validateDocument(schema: Schema, document: string): string[] {
  const root = tryParseXml(document);
  if (!root) return ["/: document is not well-formed XML"];
  const decl = schema.roots[localName(root.tag)];
  if (!decl) {
    return [`/${root.tag}: no declaration for root element`];
  }
  const out: string[] = [];
  validateElement(schema, decl, root, `/${root.tag}`, out);
  return out;
}

export function validateOutcome(schemaDocument: string, outcomeDocument: string): string[] {
  return validateDocument(parseSchema(schemaDocument), outcomeDocument);
}
