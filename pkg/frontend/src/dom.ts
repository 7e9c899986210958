/**
 * Stock HTML renderers. They emit plain markup strings so they test without
 * a browser; `mountForm` wires the generated form to a document when one
 * is available.
 */

import { escapeAttribute, escapeText } from "./xml.js";
import { FieldModel, FormModel, FormValues } from "./form.js";
import { ActivityView, HistoryRow, PropertyRow } from "./browser.js";

function inputFor(field: FieldModel): string {
  const name = escapeAttribute(field.path);
  const required = field.required ? " required" : "";
  if (field.widget === "select") {
    const options = (field.options ?? [])
      .map((o) => `<option value="${escapeAttribute(o)}">${escapeText(o)}</option>`)
      .join("");
    const blank = field.required ? "" : '<option value=""></option>';
    return `<select name="${name}"${required}>${blank}${options}</select>`;
  }
  if (field.widget === "checkbox") {
    return `<select name="${name}"${required}>` +
           '<option value="true">true</option><option value="false">false</option>' +
           "</select>";
  }
  const extra: string[] = [];
  if (field.widget === "number") {
    if (field.min !== undefined) extra.push(`min="${field.min}"`);
    if (field.max !== undefined) extra.push(`max="${field.max}"`);
    extra.push('step="any"');
  }
  if (field.pattern !== undefined) extra.push(`pattern="${escapeAttribute(field.pattern)}"`);
  if (field.minLength !== undefined) extra.push(`minlength="${field.minLength}"`);
  if (field.maxLength !== undefined) extra.push(`maxlength="${field.maxLength}"`);
  const kind = field.widget === "datetime" ? "datetime-local" : field.widget;
  return `<input type="${kind}" name="${name}"${required} ${extra.join(" ")}/>`;
}

export function renderFormHtml(model: FormModel): string {
  if (!model.supported) {
    return (
      '<form class="outcome-form raw">' +
      `<p class="fallback-note">${escapeText(model.fallbackReason)}; ` +
      "submit the raw document (validated server-side).</p>" +
      '<textarea name="raw-document" rows="12"></textarea>' +
      '<button type="submit">Submit</button></form>'
    );
  }
  const rows = model.fields
    .map((field) =>
      `<label class="field"><span>${escapeText(field.label)}` +
      `${field.required ? " *" : ""}</span>${inputFor(field)}</label>`)
    .join("");
  return `<form class="outcome-form">${rows}` +
         '<p class="form-errors" hidden></p>' +
         '<button type="submit">Submit</button></form>';
}

export function renderPropertiesHtml(rows: PropertyRow[]): string {
  const body = rows
    .map((row) =>
      `<tr><td>${escapeText(row.name)}${row.fixed ? " 🔒" : ""}</td>` +
      `<td>${escapeText(row.value)}</td></tr>`)
    .join("");
  return `<table class="properties">${body}</table>`;
}

export function renderWorkflowHtml(activities: ActivityView[]): string {
  const nodes = activities
    .map((a) =>
      `<li class="activity${a.highlighted ? " highlighted" : ""}" ` +
      `style="border-color:${a.color}" data-state="${escapeAttribute(a.state)}">` +
      `${escapeText(a.path)} (${escapeText(a.state)})` +
      `${a.enabled ? " ▶" : ""}</li>`)
    .join("");
  return `<ul class="workflow">${nodes}</ul>`;
}

export function renderHistoryHtml(rows: HistoryRow[]): string {
  const body = rows
    .map((row) =>
      `<tr class="${row.predefined ? "predefined" : "workflow"}">` +
      `<td>${row.id}</td><td>${escapeText(row.timestamp)}</td>` +
      `<td>${escapeText(row.activity)}</td><td>${escapeText(row.transition)}</td>` +
      `<td>${escapeText(row.outcomeRef ?? "")}</td></tr>`)
    .join("");
  return `<table class="history">${body}</table>`;
}

/** Read current values out of a mounted form element. */
export function readFormValues(form: { querySelectorAll(sel: string): any },
                               model: FormModel): FormValues {
  const values: FormValues = {};
  for (const field of model.fields) {
    const nodes = form.querySelectorAll(`[name="${field.path.replace(/"/g, '\\"')}"]`);
    const collected: string[] = [];
    for (const node of nodes) {
      if (typeof node.value === "string" && node.value !== "") {
        collected.push(node.value);
      }
    }
    if (collected.length > 0) {
      values[field.path] = field.repeating ? collected : collected[0]!;
    }
  }
  return values;
}
