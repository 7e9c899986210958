/**
 * Item browser view models: property panel, collection panel with slot
 * assignment affordances, workflow graph states with per-activity coloring,
 * and the chronological history view. Pure projections of the summary and
 * history payloads; every mutation goes back through the wire API.
 */

import { ApiClient, EventEntry, ItemSummary } from "./api.js";

export const STATE_COLORS: Record<string, string> = {
  Waiting: "#9e9e9e",
  Started: "#1e88e5",
  Suspended: "#fb8c00",
  Finished: "#43a047",
};

export interface PropertyRow {
  name: string;
  value: string;
  fixed: boolean;
}

export interface ActivityView {
  path: string;
  state: string;
  color: string;
  enabled: boolean;
  highlighted: boolean; // the activity an agent is working right now
}

export interface SlotView {
  id: number;
  constraintText: string;
  member: string | null;
  memberLink: string | null;
}

export interface CollectionView {
  name: string;
  version: number;
  slots: SlotView[];
}

export interface HistoryRow {
  id: number;
  timestamp: string;
  agent: string;
  activity: string;
  transition: string;
  predefined: boolean;
  outcomeRef: string | null;
}

export function propertyPanel(summary: ItemSummary): PropertyRow[] {
  return summary.properties.map((p) => ({
    name: p.name,
    value: p.value,
    fixed: !p.mutable,
  }));
}

export function workflowView(summary: ItemSummary): ActivityView[] {
  if (!summary.workflow) return [];
  const enabled = new Set(summary.workflow.enabled);
  return Object.entries(summary.workflow.states)
    .filter(([path]) => !path.startsWith("@") && !path.includes("loop:"))
    .map(([path, state]) => ({
      path,
      state,
      color: STATE_COLORS[state] ?? "#9e9e9e",
      enabled: enabled.has(path),
      highlighted: state === "Started",
    }));
}

export function collectionPanel(summary: ItemSummary): CollectionView[] {
  return summary.collections.map((c) => ({
    name: c.name,
    version: c.version,
    slots: c.slots.map((s) => ({
      id: s.id,
      constraintText: s.constraints.map(([prop, value]) => `${prop}=${value}`).join(", "),
      member: s.member,
      memberLink: s.member ? `#/items/${s.member}` : null,
    })),
  }));
}

export function historyView(events: EventEntry[]): HistoryRow[] {
  return events.map((event) => ({
    id: event.id,
    timestamp: event.timestamp,
    agent: event.agent,
    activity: event.activity,
    transition: event.transition,
    predefined: event.predefined,
    outcomeRef: event.outcome
      ? `${event.outcome.schema} v${event.outcome.version} @${event.outcome.event}`
      : null,
  }));
}

export interface ItemViews {
  summary: ItemSummary;
  properties: PropertyRow[];
  workflow: ActivityView[];
  collections: CollectionView[];
  history: HistoryRow[];
}

export async function itemBrowser(api: ApiClient, itemRef: string): Promise<ItemViews> {
  const summary = await api.summary(itemRef);
  const events = await api.history(summary.id);
  return {
    summary,
    properties: propertyPanel(summary),
    workflow: workflowView(summary),
    collections: collectionPanel(summary),
    history: historyView(events),
  };
}
