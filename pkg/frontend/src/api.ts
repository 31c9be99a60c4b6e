/** Typed client for the retrieval service HTTP API. */

export type ItemModality = "audio" | "symbolic" | "fused";

export interface ResultMetadata {
  texts?: string[];
  duration_sec?: number;
}

export interface ResultItem {
  id: string;
  score: number;
  metadata: ResultMetadata;
}

export interface QueryResponse {
  results: ResultItem[];
  latency_ms: number;
}

export interface HealthResponse {
  status: string;
  model_digest: string;
  item_count: number;
}

/** Service-side rejection (validation error, missing modality, ...). */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`service error ${status}: ${detail}`);
  }

  get modalityUnavailable(): boolean {
    return this.status === 409;
  }
}

async function rejectionDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (typeof body.detail === "string") return body.detail;
    return JSON.stringify(body.detail ?? body);
  } catch {
    return response.statusText;
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/+$/, "") + path;
  }

  async query(
    text: string,
    k: number,
    itemModality: ItemModality,
  ): Promise<QueryResponse> {
    const response = await fetch(this.url("/v1/query"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text, k, item_modality: itemModality }),
    });
    if (!response.ok) {
      throw new ApiError(response.status, await rejectionDetail(response));
    }
    return (await response.json()) as QueryResponse;
  }

  async item(id: string): Promise<ResultMetadata & { id: string }> {
    const response = await fetch(this.url(`/v1/items/${encodeURIComponent(id)}`));
    if (!response.ok) {
      throw new ApiError(response.status, await rejectionDetail(response));
    }
    return await response.json();
  }

  async health(): Promise<HealthResponse> {
    const response = await fetch(this.url("/v1/health"));
    if (!response.ok) {
      throw new ApiError(response.status, await rejectionDetail(response));
    }
    return await response.json();
  }
}
