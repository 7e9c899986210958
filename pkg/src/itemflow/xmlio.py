"""Canonical XML reading/writing for fragments and exchange files.

All kernel-authored fragments serialize through ``canonical_bytes`` so that
identical values always produce identical bytes: attributes sorted by name,
two-space indentation, UTF-8 with declaration. Documents submitted by users
(outcomes, schemas) are stored verbatim and never re-serialized.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from xml.sax.saxutils import escape, quoteattr


def parse_bytes(data: bytes | str) -> ET.Element:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return ET.fromstring(data)


def try_parse(data: bytes | str) -> ET.Element | None:
    try:
        return parse_bytes(data)
    except ET.ParseError:
        return None


def _write(out: list[str], elem: ET.Element, indent: int) -> None:
    pad = "  " * indent
    attrs = "".join(
        f" {name}={quoteattr(str(value))}" for name, value in sorted(elem.attrib.items())
    )
    children = list(elem)
    text = elem.text if elem.text and elem.text.strip() else None
    if not children and text is None:
        out.append(f"{pad}<{elem.tag}{attrs}/>\n")
    elif not children:
        out.append(f"{pad}<{elem.tag}{attrs}>{escape(elem.text or '')}</{elem.tag}>\n")
    else:
        out.append(f"{pad}<{elem.tag}{attrs}>\n")
        if text is not None:
            out.append(f"{pad}  {escape(text.strip())}\n")
        for child in children:
            _write(out, child, indent + 1)
        out.append(f"{pad}</{elem.tag}>\n")


def canonical_bytes(elem: ET.Element) -> bytes:
    """Serialize an element tree to canonical UTF-8 bytes."""
    out: list[str] = ['<?xml version="1.0" encoding="UTF-8"?>\n']
    _write(out, elem, 0)
    return "".join(out).encode("utf-8")


def elem(tag: str, attrib: dict[str, str] | None = None, text: str | None = None) -> ET.Element:
    e = ET.Element(tag, {k: str(v) for k, v in (attrib or {}).items()})
    if text is not None:
        e.text = str(text)
    return e


def sub(parent: ET.Element, tag: str, attrib: dict[str, str] | None = None,
        text: str | None = None) -> ET.Element:
    e = elem(tag, attrib, text)
    parent.append(e)
    return e


def child_text(parent: ET.Element, tag: str, default: str | None = None) -> str | None:
    node = parent.find(tag)
    if node is None:
        return default
    return node.text or ""


def require_text(parent: ET.Element, tag: str) -> str:
    value = child_text(parent, tag)
    if value is None:
        raise ValueError(f"missing <{tag}> element")
    return value
