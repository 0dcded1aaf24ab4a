// HTTP client for the tube service. At most one query is in flight;
// submitting a new one aborts its predecessor so stale meshes can never
// replace fresh ones.

import type { MeshDocumentJson, ModelDescriptor, ServerError, TubeQuery } from "./types.js";

export class QueryRejected extends Error {
  readonly status: number;
  readonly errorKind: string;
  readonly detail: string;

  constructor(status: number, body: ServerError) {
    super(`${body.error}: ${body.detail ?? ""}`);
    this.name = "QueryRejected";
    this.status = status;
    this.errorKind = body.error;
    this.detail = body.detail ?? "";
  }
}

export class NetworkFailure extends Error {
  constructor(cause: unknown) {
    super(`service unreachable: ${String(cause)}`);
    this.name = "NetworkFailure";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;
  private inflight: AbortController | null = null;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  /** True while a query is awaiting its response. */
  get busy(): boolean {
    return this.inflight !== null;
  }

  async submitQuery(query: TubeQuery): Promise<MeshDocumentJson> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.base}/query`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(query),
        signal: controller.signal,
      });
    } catch (err) {
      if (this.inflight === controller) this.inflight = null;
      if (controller.signal.aborted) throw err;
      throw new NetworkFailure(err);
    }
    if (this.inflight === controller) this.inflight = null;
    if (!response.ok) {
      let body: ServerError;
      try {
        body = (await response.json()) as ServerError;
      } catch {
        body = { error: "internal", detail: `status ${response.status}` };
      }
      throw new QueryRejected(response.status, body);
    }
    return (await response.json()) as MeshDocumentJson;
  }

  async models(): Promise<ModelDescriptor[]> {
    const response = await this.get("/models");
    return (await response.json()) as ModelDescriptor[];
  }

  async health(): Promise<{ status: string; version: number }> {
    const response = await this.get("/health");
    return (await response.json()) as { status: string; version: number };
  }

  private async get(path: string): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.base}${path}`);
    } catch (err) {
      throw new NetworkFailure(err);
    }
    if (!response.ok) {
      const body = (await response.json().catch(() => ({ error: "internal" }))) as ServerError;
      throw new QueryRejected(response.status, body);
    }
    return response;
  }
}
