// Typed client for the annotation service. The UI touches the backend
// only through these calls.

import type {
  AnnotateResult,
  DecisionEntry,
  PassageEntry,
  TechniqueSummary,
  Verdict,
} from "./types.js";

export class ServiceError extends Error {
  constructor(
    public status: number,
    message: string,
    public retryable: boolean,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

async function parseError(response: Response): Promise<ServiceError> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; keep the status text
  }
  const retryable = response.status === 503 || response.status >= 500;
  return new ServiceError(response.status, detail, retryable);
}

export class ServiceClient {
  constructor(
    private baseUrl: string,
    private token?: string,
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private headers(json = true): HeadersInit {
    const headers: Record<string, string> = {};
    if (json) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, init);
    } catch (err) {
      throw new ServiceError(0, `service unreachable: ${err}`, true);
    }
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  annotate(text: string, opts?: { k?: number; perStage?: boolean }): Promise<AnnotateResult> {
    return this.request("/annotate", {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify({ text, k: opts?.k, per_stage: opts?.perStage ?? false }),
    });
  }

  listTechniques(): Promise<TechniqueSummary[]> {
    return this.request("/techniques", { headers: this.headers(false) });
  }

  async createSession(): Promise<string> {
    const body = await this.request<{ session_id: string }>("/sessions", {
      method: "POST",
      headers: this.headers(),
    });
    return body.session_id;
  }

  addPassages(
    sessionId: string,
    text: string,
    split: "paragraph" | "sentence" | "none" = "paragraph",
  ): Promise<PassageEntry[]> {
    return this.request(`/sessions/${sessionId}/passages`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify({ text, split }),
    });
  }

  getPassages(sessionId: string): Promise<PassageEntry[]> {
    return this.request(`/sessions/${sessionId}/passages`, { headers: this.headers(false) });
  }

  decide(sessionId: string, passageId: string, techniqueId: string, verdict: Verdict): Promise<DecisionEntry> {
    return this.request(`/sessions/${sessionId}/decisions`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify({ passage_id: passageId, technique_id: techniqueId, verdict }),
    });
  }

  getDecisions(sessionId: string): Promise<DecisionEntry[]> {
    return this.request(`/sessions/${sessionId}/decisions`, { headers: this.headers(false) });
  }

  /** Raw JSONL export plus the download filename the service suggests. */
  async exportDataset(sessionId: string): Promise<{ content: string; filename: string }> {
    let response: Response;
    try {
      response = await fetch(`${this.baseUrl}/sessions/${sessionId}/export`, {
        headers: this.headers(false),
      });
    } catch (err) {
      throw new ServiceError(0, `service unreachable: ${err}`, true);
    }
    if (!response.ok) throw await parseError(response);
    const disposition = response.headers.get("content-disposition") ?? "";
    const match = /filename="([^"]+)"/.exec(disposition);
    return {
      content: await response.text(),
      filename: match?.[1] ?? `ttpmap-session-${sessionId}.jsonl`,
    };
  }
}
