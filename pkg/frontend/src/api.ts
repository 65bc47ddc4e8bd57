// Typed client for the control-plane HTTP API. Every request the
// dashboard makes goes through here, and every path is recorded, so a
// test (or an auditor reading a network log) can confirm nothing is
// called outside the documented endpoints.

import type { AgentRow, AttributeCatalog, TaskRow } from "./types.js";

export const DOCUMENTED_ENDPOINTS: RegExp[] = [
  /^POST \/tasks$/,
  /^GET \/tasks(\?.*)?$/,
  /^POST \/tasks\/[^/]+\/actions$/,
  /^GET \/tasks\/[^/]+\/logs$/,
  /^GET \/agents$/,
  /^GET \/attributes(\?.*)?$/,
];

export function isDocumented(entry: string): boolean {
  return DOCUMENTED_ENDPOINTS.some((re) => re.test(entry));
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`${status}: ${detail}`);
  }
}

export interface ApiOptions {
  token?: string;
  fetchFn?: typeof fetch;
  newRequestId?: () => string;
}

const BOUNDARY = "edgeorc-dashboard-boundary";

function multipart(fields: Record<string, Uint8Array | string>): Uint8Array {
  const encoder = new TextEncoder();
  const chunks: Uint8Array[] = [];
  for (const [name, value] of Object.entries(fields)) {
    chunks.push(
      encoder.encode(
        `--${BOUNDARY}\r\nContent-Disposition: form-data; name="${name}"; filename="${name}"\r\n\r\n`,
      ),
    );
    chunks.push(typeof value === "string" ? encoder.encode(value) : value);
    chunks.push(encoder.encode("\r\n"));
  }
  chunks.push(encoder.encode(`--${BOUNDARY}--`));
  const total = chunks.reduce((n, c) => n + c.length, 0);
  const body = new Uint8Array(total);
  let offset = 0;
  for (const chunk of chunks) {
    body.set(chunk, offset);
    offset += chunk.length;
  }
  return body;
}

export class ApiClient {
  readonly requests: string[] = [];
  private fetchFn: typeof fetch;
  private token?: string;
  private newRequestId: () => string;

  constructor(
    public baseUrl: string,
    options: ApiOptions = {},
  ) {
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
    this.token = options.token;
    this.newRequestId =
      options.newRequestId ?? (() => `ui-${Date.now()}-${Math.floor(Math.random() * 1e9)}`);
  }

  private async call(
    method: "GET" | "POST",
    path: string,
    body?: Uint8Array | string,
    contentType?: string,
    requestId?: string,
  ): Promise<Response> {
    this.requests.push(`${method} ${path}`);
    const headers: Record<string, string> = {};
    if (contentType) headers["Content-Type"] = contentType;
    if (this.token && method === "POST") headers["Authorization"] = `Bearer ${this.token}`;
    if (requestId) headers["X-Request-Id"] = requestId;
    const response = await this.fetchFn(this.baseUrl.replace(/\/$/, "") + path, {
      method,
      headers,
      body: body as BodyInit | undefined,
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const doc = (await response.json()) as { detail?: string };
        if (doc.detail) detail = doc.detail;
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return response;
  }

  async listTasks(): Promise<TaskRow[]> {
    const response = await this.call("GET", "/tasks");
    return ((await response.json()) as { tasks: TaskRow[] }).tasks;
  }

  async listAgents(): Promise<AgentRow[]> {
    const response = await this.call("GET", "/agents");
    return ((await response.json()) as { agents: AgentRow[] }).agents;
  }

  async listAttributes(): Promise<AttributeCatalog> {
    const response = await this.call("GET", "/attributes");
    return ((await response.json()) as { attributes: AttributeCatalog }).attributes;
  }

  async deploy(
    manifest: object,
    archive: Uint8Array,
    placement?: string[],
  ): Promise<{ task_ids: string[] }> {
    const fields: Record<string, Uint8Array | string> = {
      manifest: JSON.stringify(manifest),
      archive,
    };
    if (placement && placement.length) fields["placement"] = placement.join(",");
    const response = await this.call(
      "POST",
      "/tasks",
      multipart(fields),
      `multipart/form-data; boundary=${BOUNDARY}`,
      this.newRequestId(),
    );
    return (await response.json()) as { task_ids: string[] };
  }

  async action(taskId: string, action: "kill" | "restart"): Promise<void> {
    await this.call(
      "POST",
      `/tasks/${taskId}/actions`,
      JSON.stringify({ action }),
      "application/json",
      this.newRequestId(),
    );
  }

  async logs(taskId: string): Promise<string> {
    const response = await this.call("GET", `/tasks/${taskId}/logs`);
    return await response.text();
  }
}
