#!/usr/bin/env python3
"""Generate the client/server validator parity corpus.

Emits frontend/tests/fixtures/parity.json: schemas spanning the supported
subset plus generated outcome documents (valid and deliberately broken),
each tagged with the server-side verdict from the same validate_outcome
the server runs. The frontend test replays the corpus through the client
validator and demands 100% agreement.
"""

from __future__ import annotations

import json
import os
import random
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from itemflow.descriptions import validate_outcome  # noqa: E402

OUT = os.path.join(os.path.dirname(__file__), "..", "frontend", "tests",
                   "fixtures", "parity.json")

XS = 'xmlns:xs="http://www.w3.org/2001/XMLSchema"'

SCHEMAS: dict[str, str] = {
    "bounded-number": f"""<?xml version="1.0"?>
<xs:schema {XS}>
  <xs:element name="reading">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="value">
          <xs:simpleType>
            <xs:restriction base="xs:decimal">
              <xs:minInclusive value="-5"/>
              <xs:maxInclusive value="120.5"/>
            </xs:restriction>
          </xs:simpleType>
        </xs:element>
      </xs:sequence>
    </xs:complexType>
  </xs:element>
</xs:schema>
""",
    "integer-exclusive": f"""<?xml version="1.0"?>
<xs:schema {XS}>
  <xs:element name="count">
    <xs:simpleType>
      <xs:restriction base="xs:integer">
        <xs:minExclusive value="0"/>
        <xs:maxExclusive value="100"/>
      </xs:restriction>
    </xs:simpleType>
  </xs:element>
</xs:schema>
""",
    "enumeration": f"""<?xml version="1.0"?>
<xs:schema {XS}>
  <xs:element name="grade">
    <xs:simpleType>
      <xs:restriction base="xs:string">
        <xs:enumeration value="pass"/>
        <xs:enumeration value="fail"/>
        <xs:enumeration value="retest"/>
      </xs:restriction>
    </xs:simpleType>
  </xs:element>
</xs:schema>
""",
    "mixed-record": f"""<?xml version="1.0"?>
<xs:schema {XS}>
  <xs:element name="record">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="label">
          <xs:simpleType>
            <xs:restriction base="xs:string">
              <xs:minLength value="2"/>
              <xs:maxLength value="8"/>
            </xs:restriction>
          </xs:simpleType>
        </xs:element>
        <xs:element name="flag" type="xs:boolean"/>
        <xs:element name="when" type="xs:date" minOccurs="0"/>
        <xs:element name="note" type="xs:string" minOccurs="0" maxOccurs="3"/>
      </xs:sequence>
      <xs:attribute name="id" type="xs:integer" use="required"/>
      <xs:attribute name="unit"/>
    </xs:complexType>
  </xs:element>
</xs:schema>
""",
    "patterned": f"""<?xml version="1.0"?>
<xs:schema {XS}>
  <xs:element name="barcode">
    <xs:simpleType>
      <xs:restriction base="xs:string">
        <xs:pattern value="[A-Z]{{2}}-[0-9]{{4}}"/>
      </xs:restriction>
    </xs:simpleType>
  </xs:element>
</xs:schema>
""",
    "measured-length": f"""<?xml version="1.0"?>
<xs:schema {XS}>
  <xs:element name="length">
    <xs:complexType>
      <xs:simpleContent>
        <xs:extension base="xs:decimal">
          <xs:attribute name="unit" use="required"/>
        </xs:extension>
      </xs:simpleContent>
    </xs:complexType>
  </xs:element>
</xs:schema>
""",
    "repeated-samples": f"""<?xml version="1.0"?>
<xs:schema {XS}>
  <xs:element name="run">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="sample" minOccurs="1" maxOccurs="4">
          <xs:complexType>
            <xs:sequence>
              <xs:element name="v" type="xs:decimal"/>
            </xs:sequence>
          </xs:complexType>
        </xs:element>
      </xs:sequence>
    </xs:complexType>
  </xs:element>
</xs:schema>
""",
}


def gen_documents(rng: random.Random) -> list[tuple[str, str]]:
    docs: list[tuple[str, str]] = []

    def add(schema: str, doc: str) -> None:
        docs.append((schema, doc))

    # bounded-number: inclusive boundary sweep plus junk
    for value in (-7, -5.0001, -5, -4.999, 0, 60.25, 120.4999, 120.5, 120.51,
                  121, "1e2", "12.", ".5", "abc", "", "  7  "):
        add("bounded-number", f"<reading><value>{value}</value></reading>")
    add("bounded-number", "<reading/>")
    add("bounded-number", "<reading><value>5</value><extra/></reading>")
    add("bounded-number", "<reading><value>5</value></reading><!-- tail -->")
    for _ in range(80):
        value = round(rng.uniform(-20, 140), 3)
        add("bounded-number", f"<reading><value>{value}</value></reading>")

    # integer-exclusive boundaries
    for value in (-1, 0, 1, 50, 99, 100, 101, 2.5, "007", "+3", "-0", "3.0"):
        add("integer-exclusive", f"<count>{value}</count>")
    for _ in range(60):
        add("integer-exclusive", f"<count>{rng.randint(-10, 110)}</count>")

    # enumeration
    for value in ("pass", "fail", "retest", "PASS", "pas", "", "passx"):
        add("enumeration", f"<grade>{value}</grade>")
    for _ in range(30):
        value = rng.choice(["pass", "fail", "retest", "skip", "maybe", "Pass"])
        add("enumeration", f"<grade>{value}</grade>")

    # mixed-record: combinations of presence/absence/types
    labels = ["ok", "x", "abcdefgh", "abcdefghi", "ab"]
    flags = ["true", "false", "1", "0", "yes", ""]
    whens = ["2024-01-31", "2024-1-31", "not-a-date", None]
    ids = ["7", "-2", "3.5", "junk", None]
    for _ in range(180):
        label = rng.choice(labels)
        flag = rng.choice(flags)
        when = rng.choice(whens)
        ident = rng.choice(ids)
        notes = "".join(f"<note>n{k}</note>" for k in range(rng.randint(0, 5)))
        attrs = f' id="{ident}"' if ident is not None else ""
        if rng.random() < 0.2:
            attrs += ' unit="mm"'
        if rng.random() < 0.1:
            attrs += ' rogue="1"'
        when_el = f"<when>{when}</when>" if when is not None else ""
        body = f"<label>{label}</label><flag>{flag}</flag>{when_el}{notes}"
        if rng.random() < 0.1:
            body = body.replace("<label>", "<flag>x</flag><label>", 1)
        add("mixed-record", f"<record{attrs}>{body}</record>")

    # patterned
    for value in ("AB-1234", "ab-1234", "AB-12345", "A-1234", "ZZ-0000", "ZZ-00O0"):
        add("patterned", f"<barcode>{value}</barcode>")
    for _ in range(30):
        good = rng.random() < 0.5
        if good:
            value = (f"{rng.choice('ABCXYZ')}{rng.choice('ABCXYZ')}-"
                     f"{rng.randint(0, 9)}{rng.randint(0, 9)}{rng.randint(0, 9)}{rng.randint(0, 9)}")
        else:
            value = rng.choice(["A1-2345", "AA-999", "aA-1234", "AA_1234"])
        add("patterned", f"<barcode>{value}</barcode>")

    # simpleContent with attribute
    for unit, value in (("mm", "30.5"), ("", "30.5"), ("mm", "x"), (None, "1")):
        attr = f' unit="{unit}"' if unit is not None else ""
        add("measured-length", f"<length{attr}>{value}</length>")
    for _ in range(30):
        attr = ' unit="mm"' if rng.random() < 0.8 else ""
        value = round(rng.uniform(-5, 50), 2) if rng.random() < 0.8 else "NaNish"
        add("measured-length", f"<length{attr}>{value}</length>")

    # repetition bounds
    for n in range(0, 7):
        samples = "".join(f"<sample><v>{k}.5</v></sample>" for k in range(n))
        add("repeated-samples", f"<run>{samples}</run>")
    for _ in range(40):
        n = rng.randint(0, 6)
        broken = rng.random() < 0.2
        samples = "".join(
            f"<sample><v>{'x' if broken and k == 0 else k}</v></sample>"
            for k in range(n))
        add("repeated-samples", f"<run>{samples}</run>")

    # not-well-formed and wrong-root documents
    add("bounded-number", "<reading><value>5</value>")
    add("bounded-number", "<wrongroot/>")
    add("enumeration", "not xml at all")
    return docs


def main() -> int:
    rng = random.Random(20260809)
    entries = []
    for schema_key, doc in gen_documents(rng):
        schema_doc = SCHEMAS[schema_key]
        try:
            violations = validate_outcome(schema_doc.encode(), doc.encode())
            verdict = len(violations) == 0
        except Exception:
            verdict = False
            violations = ["malformed"]
        entries.append({"schema": schema_key, "document": doc,
                        "valid": verdict, "violations": len(violations)})
    payload = {"schemas": SCHEMAS, "cases": entries}
    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    with open(OUT, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    valid = sum(1 for e in entries if e["valid"])
    print(f"wrote {len(entries)} cases ({valid} valid, {len(entries) - valid} invalid) "
          f"to {os.path.abspath(OUT)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
