/**
 * Minimal XML reader/writer for kernel documents.
 *
 * Covers exactly what the wire carries: prolog, comments, elements with
 * attributes, character data with the five named entities plus numeric
 * references. To stay verdict-compatible with the server, an element's
 * `text` is the character data before its first child element; trailing
 * text after a child is ignored on both sides.
 */

export interface XmlElement {
  tag: string;
  attributes: Record<string, string>;
  children: XmlElement[];
  text: string;
}

export class XmlParseError extends Error {}

const NAMED_ENTITIES: Record<string, string> = {
  amp: "&",
  lt: "<",
  gt: ">",
  quot: '"',
  apos: "'",
};

export function decodeEntities(raw: string): string {
  return raw.replace(/&(#x?[0-9a-fA-F]+|[a-zA-Z]+);/g, (whole, body: string) => {
    if (body.startsWith("#x") || body.startsWith("#X")) {
      return String.fromCodePoint(parseInt(body.slice(2), 16));
    }
    if (body.startsWith("#")) {
      return String.fromCodePoint(parseInt(body.slice(1), 10));
    }
    const named = NAMED_ENTITIES[body];
    if (named === undefined) {
      throw new XmlParseError(`unknown entity &${body};`);
    }
    return named;
  });
}

export function escapeText(value: string): string {
  return value.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function escapeAttribute(value: string): string {
  return escapeText(value).replace(/"/g, "&quot;");
}

/** Local name: strips `ns:` prefixes and `{uri}` wrappers. */
export function localName(tag: string): string {
  const brace = tag.lastIndexOf("}");
  const cut = brace >= 0 ? tag.slice(brace + 1) : tag;
  const colon = cut.lastIndexOf(":");
  return colon >= 0 ? cut.slice(colon + 1) : cut;
}

class Reader {
  pos = 0;

  constructor(readonly source: string) {}

  peek(offset = 0): string {
    return this.source[this.pos + offset] ?? "";
  }

  startsWith(prefix: string): boolean {
    return this.source.startsWith(prefix, this.pos);
  }

  skipWhitespace(): void {
    while (/\s/.test(this.peek())) this.pos += 1;
  }

  expect(token: string): void {
    if (!this.startsWith(token)) {
      throw new XmlParseError(
        `expected '${token}' at offset ${this.pos}, found '${this.source.slice(this.pos, this.pos + 12)}'`,
      );
    }
    this.pos += token.length;
  }

  readName(): string {
    const start = this.pos;
    while (/[^\s=/>]/.test(this.peek()) && this.peek() !== "") this.pos += 1;
    if (this.pos === start) {
      throw new XmlParseError(`expected a name at offset ${this.pos}`);
    }
    return this.source.slice(start, this.pos);
  }

  readUntil(token: string): string {
    const index = this.source.indexOf(token, this.pos);
    if (index < 0) throw new XmlParseError(`unterminated section, expected '${token}'`);
    const chunk = this.source.slice(this.pos, index);
    this.pos = index + token.length;
    return chunk;
  }
}

function parseAttributes(reader: Reader): Record<string, string> {
  const attributes: Record<string, string> = {};
  for (;;) {
    reader.skipWhitespace();
    const ch = reader.peek();
    if (ch === ">" || ch === "/" || ch === "") return attributes;
    const name = reader.readName();
    reader.skipWhitespace();
    reader.expect("=");
    reader.skipWhitespace();
    const quote = reader.peek();
    if (quote !== '"' && quote !== "'") {
      throw new XmlParseError(`attribute ${name} is not quoted`);
    }
    reader.pos += 1;
    attributes[name] = decodeEntities(reader.readUntil(quote));
  }
}

function parseElement(reader: Reader): XmlElement {
  reader.expect("<");
  const tag = reader.readName();
  const attributes = parseAttributes(reader);
  const element: XmlElement = { tag, attributes, children: [], text: "" };
  reader.skipWhitespace();
  if (reader.startsWith("/>")) {
    reader.pos += 2;
    return element;
  }
  reader.expect(">");
  let textParts: string[] = [];
  let sawChild = false;
  for (;;) {
    if (reader.startsWith("<!--")) {
      reader.pos += 4;
      reader.readUntil("-->");
      continue;
    }
    if (reader.startsWith("</")) {
      reader.pos += 2;
      const closing = reader.readName();
      if (closing !== tag) {
        throw new XmlParseError(`mismatched </${closing}>, expected </${tag}>`);
      }
      reader.skipWhitespace();
      reader.expect(">");
      if (!sawChild) element.text = decodeEntities(textParts.join(""));
      return element;
    }
    if (reader.peek() === "<") {
      element.children.push(parseElement(reader));
      sawChild = true;
      continue;
    }
    if (reader.peek() === "") {
      throw new XmlParseError(`unterminated <${tag}>`);
    }
    const start = reader.pos;
    while (reader.peek() !== "<" && reader.peek() !== "") reader.pos += 1;
    if (!sawChild) textParts.push(reader.source.slice(start, reader.pos));
  }
}

export function parseXml(source: string): XmlElement {
  const reader = new Reader(source);
  reader.skipWhitespace();
  if (reader.startsWith("<?xml")) {
    reader.pos += 5;
    reader.readUntil("?>");
  }
  for (;;) {
    reader.skipWhitespace();
    if (reader.startsWith("<!--")) {
      reader.pos += 4;
      reader.readUntil("-->");
      continue;
    }
    break;
  }
  const root = parseElement(reader);
  for (;;) {
    reader.skipWhitespace();
    if (reader.startsWith("<!--")) {
      reader.pos += 4;
      reader.readUntil("-->");
      continue;
    }
    break;
  }
  if (reader.pos !== reader.source.length) {
    throw new XmlParseError("trailing content after the document element");
  }
  return root;
}

export function tryParseXml(source: string): XmlElement | null {
  try {
    return parseXml(source);
  } catch {
    return null;
  }
}

export function serializeXml(element: XmlElement): string {
  const attrs = Object.entries(element.attributes)
    .map(([name, value]) => ` ${name}="${escapeAttribute(value)}"`)
    .join("");
  if (element.children.length === 0 && element.text === "") {
    return `<${element.tag}${attrs}/>`;
  }
  const inner =
    escapeText(element.text) + element.children.map(serializeXml).join("");
  return `<${element.tag}${attrs}>${inner}</${element.tag}>`;
}

export function el(
  tag: string,
  attributes: Record<string, string> = {},
  children: XmlElement[] = [],
  text = "",
): XmlElement {
  return { tag, attributes, children, text };
}
