/**
 * Schema-driven outcome entry forms.
 *
 * `renderOutcomeForm` turns a schema document into a form model: one field
 * per declared element/attribute with a type-appropriate widget. Constructs
 * outside the form subset (choice, wildcards, element refs, nesting deeper
 * than one complex level) mark the model unsupported, which the UI renders
 * as a raw-document editor with server-side validation only.
 *
 * Client-side validation builds the document from the field values and
 * runs the same validator the server uses, so accept/reject always agrees.
 */

import {
  ElementDecl,
  Particle,
  Schema,
  SimpleType,
  parseSchema,
  validateDocument,
} from "./schema.js";
import { XmlElement, el, serializeXml } from "./xml.js";

export type Widget = "text" | "number" | "checkbox" | "select" | "date" | "datetime";

export interface FieldModel {
  /** Slash path of the element below the root, or `@name` for an attribute. */
  path: string;
  label: string;
  widget: Widget;
  required: boolean;
  repeating: boolean;
  minOccurs: number;
  maxOccurs: number | null;
  options?: string[];
  min?: number;
  max?: number;
  minLength?: number;
  maxLength?: number;
  pattern?: string;
}

export interface FormModel {
  schemaDocument: string;
  rootElement: string;
  supported: boolean;
  /** Why the form fell back to the raw editor; empty when supported. */
  fallbackReason: string;
  fields: FieldModel[];
}

/** Values keyed by field path; repeating fields hold arrays. */
export type FormValues = Record<string, string | string[]>;

function widgetFor(st: SimpleType): Widget {
  if (st.enumeration && st.enumeration.length > 0) return "select";
  switch (st.base) {
    case "integer":
    case "int":
    case "long":
    case "decimal":
    case "double":
    case "float":
      return "number";
    case "boolean":
      return "checkbox";
    case "date":
      return "date";
    case "dateTime":
      return "datetime";
    default:
      return "text";
  }
}

function fieldFromSimple(path: string, st: SimpleType, required: boolean,
                         minOccurs: number, maxOccurs: number | null): FieldModel {
  const field: FieldModel = {
    path,
    label: path.split("/").pop()!.replace("@", ""),
    widget: widgetFor(st),
    required,
    repeating: maxOccurs === null || maxOccurs > 1,
    minOccurs,
    maxOccurs,
  };
  if (st.enumeration) field.options = [...st.enumeration];
  if (st.minInclusive !== undefined) field.min = st.minInclusive;
  if (st.maxInclusive !== undefined) field.max = st.maxInclusive;
  if (st.minExclusive !== undefined) field.min = st.minExclusive;
  if (st.maxExclusive !== undefined) field.max = st.maxExclusive;
  if (st.minLength !== undefined) field.minLength = st.minLength;
  if (st.maxLength !== undefined) field.maxLength = st.maxLength;
  if (st.pattern !== undefined) field.pattern = st.pattern;
  return field;
}

class Unsupported extends Error {}

function collectFields(prefix: string, decl: ElementDecl, fields: FieldModel[],
                       depth: number): void {
  if (decl.simple) {
    return; // handled by the caller, which knows the occurrence bounds
  }
  const ct = decl.complex!;
  for (const attr of ct.attributes) {
    fields.push(fieldFromSimple(
      `${prefix}@${attr.name}`, attr.type, attr.required, attr.required ? 1 : 0, 1));
  }
  if (ct.simple) {
    fields.push(fieldFromSimple(prefix ? `${prefix}` : "", ct.simple, true, 1, 1));
    return;
  }
  for (const particle of ct.particles) {
    if (particle.kind !== "element") {
      throw new Unsupported(`xs:${particle.kind} is not form-renderable`);
    }
    if (particle.ref !== undefined) {
      throw new Unsupported("element refs are not form-renderable");
    }
    const child = particle.element!;
    const path = prefix ? `${prefix}/${child.name}` : child.name;
    if (child.simple) {
      fields.push(fieldFromSimple(path, child.simple, particle.minOccurs > 0,
                                  particle.minOccurs, particle.maxOccurs));
    } else {
      if (depth >= 2) throw new Unsupported("nesting deeper than two levels");
      if (particle.maxOccurs !== 1 || particle.minOccurs !== 1) {
        throw new Unsupported("repeating groups are not form-renderable");
      }
      collectFields(path, child, fields, depth + 1);
    }
  }
}

export function renderOutcomeForm(schemaDocument: string): FormModel {
  const schema = parseSchema(schemaDocument);
  const rootNames = Object.keys(schema.roots);
  const model: FormModel = {
    schemaDocument,
    rootElement: rootNames[0]!,
    supported: true,
    fallbackReason: "",
    fields: [],
  };
  if (rootNames.length !== 1) {
    model.supported = false;
    model.fallbackReason = "schema declares multiple root elements";
    return model;
  }
  const decl = schema.roots[model.rootElement]!;
  try {
    if (decl.simple) {
      model.fields.push(fieldFromSimple(model.rootElement, decl.simple, true, 1, 1));
    } else {
      collectFields("", decl, model.fields, 0);
    }
  } catch (error) {
    if (error instanceof Unsupported) {
      model.supported = false;
      model.fallbackReason = error.message;
      model.fields = [];
      return model;
    }
    throw error;
  }
  return model;
}

function values_at(values: FormValues, path: string): string[] {
  const raw = values[path];
  if (raw === undefined) return [];
  return Array.isArray(raw) ? raw : [raw];
}

/** Build the outcome document the form submits. */
export function buildDocument(model: FormModel, values: FormValues): string {
  const schema = parseSchema(model.schemaDocument);
  const decl = schema.roots[model.rootElement]!;
  if (decl.simple) {
    const text = values_at(values, model.rootElement)[0] ?? "";
    return serializeXml(el(model.rootElement, {}, [], text));
  }
  const root = buildElement(model.rootElement, "", decl, values);
  return serializeXml(root);
}

function buildElement(tag: string, prefix: string, decl: ElementDecl,
                      values: FormValues): XmlElement {
  const ct = decl.complex!;
  const attributes: Record<string, string> = {};
  for (const attr of ct.attributes) {
    const provided = values_at(values, `${prefix}@${attr.name}`)[0];
    if (provided !== undefined && provided !== "") attributes[attr.name] = provided;
  }
  if (ct.simple) {
    const text = values_at(values, prefix)[0] ?? "";
    return el(tag, attributes, [], text);
  }
  const children: XmlElement[] = [];
  for (const particle of ct.particles) {
    const child = particle.element!;
    const path = prefix ? `${prefix}/${child.name}` : child.name;
    if (child.simple) {
      for (const value of values_at(values, path)) {
        children.push(el(child.name, {}, [], value));
      }
    } else {
      children.push(buildElement(child.name, path, child, values));
    }
  }
  return el(tag, attributes, children);
}

/**
 * Client-side verdict for the values as submitted: builds the document and
 * validates it exactly the way the server will.
 */
export function validateValues(model: FormModel, values: FormValues): string[] {
  const schema = parseSchema(model.schemaDocument);
  return validateDocument(schema, buildDocument(model, values));
}

export function clientAccepts(model: FormModel, values: FormValues): boolean {
  return validateValues(model, values).length === 0;
}
