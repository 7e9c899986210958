import { describe, expect, test } from "vitest";

import { buildDocument, clientAccepts, renderOutcomeForm } from "../src/form.js";
import { renderFormHtml } from "../src/dom.js";

const XS = 'xmlns:xs="http://www.w3.org/2001/XMLSchema"';

const MEASUREMENT = `<xs:schema ${XS}>
  <xs:element name="measurement">
    <xs:complexType>
      <xs:sequence>
        <xs:element name="value">
          <xs:simpleType>
            <xs:restriction base="xs:decimal">
              <xs:minInclusive value="0"/>
              <xs:maxInclusive value="100"/>
            </xs:restriction>
          </xs:simpleType>
        </xs:element>
        <xs:element name="note" type="xs:string" minOccurs="0" maxOccurs="3"/>
      </xs:sequence>
      <xs:attribute name="station"/>
    </xs:complexType>
  </xs:element>
</xs:schema>`;

describe("renderOutcomeForm", () => {
  test("one required numeric element becomes one number field", () => {
    const model = renderOutcomeForm(MEASUREMENT);
    expect(model.supported).toBe(true);
    const value = model.fields.find((f) => f.path === "value");
    expect(value).toBeDefined();
    expect(value!.widget).toBe("number");
    expect(value!.required).toBe(true);
    expect(value!.min).toBe(0);
    expect(value!.max).toBe(100);
    const note = model.fields.find((f) => f.path === "note");
    expect(note!.required).toBe(false);
    expect(note!.repeating).toBe(true);
    const station = model.fields.find((f) => f.path === "@station");
    expect(station!.widget).toBe("text");
  });

  test("submit blocked when the required field is empty", () => {
    const model = renderOutcomeForm(MEASUREMENT);
    expect(clientAccepts(model, {})).toBe(false);
    expect(clientAccepts(model, { value: "55.5" })).toBe(true);
  });

  test("enumeration becomes a select listing exactly the values", () => {
    const model = renderOutcomeForm(`<xs:schema ${XS}>
      <xs:element name="grade"><xs:simpleType>
        <xs:restriction base="xs:string">
          <xs:enumeration value="pass"/><xs:enumeration value="fail"/>
        </xs:restriction>
      </xs:simpleType></xs:element></xs:schema>`);
    expect(model.fields).toHaveLength(1);
    expect(model.fields[0]!.widget).toBe("select");
    expect(model.fields[0]!.options).toEqual(["pass", "fail"]);
    const html = renderFormHtml(model);
    expect(html).toContain('<option value="pass">');
    expect(html).toContain('<option value="fail">');
    expect((html.match(/<option/g) ?? []).length).toBe(2);
  });

  test("boolean becomes a true/false control", () => {
    const model = renderOutcomeForm(`<xs:schema ${XS}>
      <xs:element name="ok" type="xs:boolean"/></xs:schema>`);
    expect(model.fields[0]!.widget).toBe("checkbox");
  });

  test("unsupported constructs fall back to the raw editor", () => {
    const model = renderOutcomeForm(`<xs:schema ${XS}>
      <xs:element name="msg"><xs:complexType><xs:sequence>
        <xs:choice>
          <xs:element name="a" type="xs:string"/>
          <xs:element name="b" type="xs:string"/>
        </xs:choice>
      </xs:sequence></xs:complexType></xs:element></xs:schema>`);
    expect(model.supported).toBe(false);
    expect(model.fallbackReason).toContain("choice");
    const html = renderFormHtml(model);
    expect(html).toContain("textarea");
  });

  test("built document reflects the values", () => {
    const model = renderOutcomeForm(MEASUREMENT);
    const doc = buildDocument(model, {
      value: "42.5",
      note: ["first", "second"],
      "@station": "S3",
    });
    expect(doc).toBe(
      '<measurement station="S3"><value>42.5</value>' +
      "<note>first</note><note>second</note></measurement>");
  });

  test("form html renders one control per field", () => {
    const model = renderOutcomeForm(MEASUREMENT);
    const html = renderFormHtml(model);
    expect(html).toContain('name="value"');
    expect(html).toContain('name="note"');
    expect(html).toContain('name="@station"');
    expect(html).toContain('type="number"');
    expect(html).toContain("required");
  });
});
