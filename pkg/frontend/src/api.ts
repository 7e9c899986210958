/** Wire API client; the UI holds no state the server doesn't. */

export class ApiError extends Error {
  constructor(readonly code: string, message: string) {
    super(message);
  }
}

export interface JobEntry {
  item_id: string;
  item_name: string;
  activity: string;
  transition: string;
  required_role: string;
  outcome_schema: [string, number] | null;
  issued_at: string;
}

export interface ItemSummary {
  id: string;
  name: string;
  type: string;
  properties: { name: string; value: string; mutable: boolean }[];
  collections: {
    name: string;
    version: number;
    slots: { id: number; member: string | null; constraints: [string, string][] }[];
  }[];
  viewpoints: { schema: string; view: string; event: number }[];
  history_length: number;
  workflow: {
    states: Record<string, string>;
    enabled: string[];
    terminal: boolean;
  } | null;
}

export interface EventEntry {
  id: number;
  timestamp: string;
  agent: string;
  activity: string;
  transition: string;
  predefined: boolean;
  outcome?: { schema: string; version: number; event: number };
  view?: string;
}

export class ApiClient {
  token: string | null = null;

  constructor(readonly baseUrl: string,
              readonly fetchImpl: typeof fetch = fetch) {}

  private async request(method: string, path: string, body?: unknown): Promise<any> {
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    let payload: string | undefined;
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
      payload = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.baseUrl + path,
                                          { method, headers, body: payload });
    const data = await response.json();
    if (!data.ok) {
      throw new ApiError(data.error ?? "KernelError", data.message ?? "");
    }
    return data;
  }

  async login(agent: string, secret: string): Promise<void> {
    const data = await this.request("POST", "/api/login", { agent, secret });
    this.token = data.token;
  }

  async jobs(filter?: { item?: string; prefix?: string }): Promise<JobEntry[]> {
    const params = new URLSearchParams();
    if (filter?.item) params.set("item", filter.item);
    if (filter?.prefix) params.set("prefix", filter.prefix);
    const query = params.size > 0 ? `?${params}` : "";
    return (await this.request("GET", `/api/jobs${query}`)).jobs;
  }

  async summary(item: string): Promise<ItemSummary> {
    return (await this.request("GET", `/api/items/${encodeURIComponent(item)}`)).item;
  }

  async history(item: string): Promise<EventEntry[]> {
    return (await this.request(
      "GET", `/api/items/${encodeURIComponent(item)}/history`)).events;
  }

  async viewpoint(item: string, schema: string, view = "last"): Promise<string> {
    const data = await this.request(
      "GET",
      `/api/items/${encodeURIComponent(item)}/viewpoint/` +
      `${encodeURIComponent(schema)}/${encodeURIComponent(view)}`);
    return data.document;
  }

  async description(kind: string, name: string, version = "last"): Promise<string> {
    const data = await this.request(
      "GET",
      `/api/descriptions/${encodeURIComponent(kind)}/${encodeURIComponent(name)}` +
      `?version=${encodeURIComponent(version)}`);
    return data.document;
  }

  async execute(item: string, activity: string, transition: string,
                outcome?: string, requestId?: string): Promise<EventEntry> {
    const body: Record<string, unknown> = { activity, transition };
    if (outcome !== undefined) body["outcome"] = outcome;
    if (requestId !== undefined) body["request_id"] = requestId;
    const data = await this.request(
      "POST", `/api/items/${encodeURIComponent(item)}/execute`, body);
    return data.event;
  }

  async step(item: string, step: string, payload: string): Promise<EventEntry> {
    const data = await this.request(
      "POST", `/api/items/${encodeURIComponent(item)}/step`, { step, payload });
    return data.event;
  }

  async listItems(prefix: string, limit = 0): Promise<{ name: string; id: string; type: string }[]> {
    const params = new URLSearchParams({ prefix, limit: String(limit) });
    return (await this.request("GET", `/api/items?${params}`)).items;
  }
}
