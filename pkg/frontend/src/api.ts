/** Thin client for the service endpoints; the workbench has no other backend. */

import type {
  Audience,
  BaseContext,
  DiagnosticResponse,
  FeedbackResult,
  TicketView,
  TsgListEntry,
  ValidateResponse,
} from "./types.js";

export interface ExecuteRequest {
  base_context: BaseContext;
  audience: Audience;
  problem_statement?: string;
  injected_tsgs?: string[];
  ticket?: { id: string; severity: string; owning_team: string };
  now?: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`API error ${status}`);
  }
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  private async post<T>(path: string, body: unknown, signal?: AbortSignal): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!response.ok) {
      throw new ApiError(response.status, await response.json().catch(() => null));
    }
    return (await response.json()) as T;
  }

  /** Injected-document dry run: parse + validate without executing. */
  validateDocument(text: string, signal?: AbortSignal): Promise<ValidateResponse> {
    return this.post<ValidateResponse>(
      "/api/execute",
      {
        base_context: {},
        audience: "InternalOnDemand",
        injected_tsgs: [text],
        validate_only: true,
      },
      signal,
    );
  }

  execute(request: ExecuteRequest, signal?: AbortSignal): Promise<DiagnosticResponse> {
    return this.post<DiagnosticResponse>("/api/execute", request, signal);
  }

  async listTsgs(): Promise<TsgListEntry[]> {
    const response = await fetch(this.baseUrl + "/api/tsgs");
    if (!response.ok) throw new ApiError(response.status, null);
    return (await response.json()) as TsgListEntry[];
  }

  submitFeedback(
    tsgId: string,
    verdict: "up" | "down",
    text?: string,
  ): Promise<FeedbackResult> {
    return this.post<FeedbackResult>("/api/feedback", {
      tsg_id: tsgId,
      verdict,
      text,
    });
  }

  async uploadTsg(tsgId: string, yamlText: string): Promise<unknown> {
    const response = await fetch(`${this.baseUrl}/api/tsgs/${encodeURIComponent(tsgId)}`, {
      method: "PUT",
      headers: { "Content-Type": "text/plain" },
      body: yamlText,
    });
    if (!response.ok) {
      throw new ApiError(response.status, await response.json().catch(() => null));
    }
    return response.json();
  }
}

/** Validation errors arrive as a 422 detail; normalize to a report shape. */
export function reportFromError(error: unknown): ValidateResponse | null {
  if (error instanceof ApiError && error.status === 422 && error.detail) {
    const detail = (error.detail as { detail?: { validation?: unknown; error?: string } }).detail;
    if (detail?.validation) {
      return {
        reports: [{ id: "draft", validation: detail.validation as never }],
        graphs: [],
      };
    }
    if (typeof detail?.error === "string") {
      return {
        reports: [
          {
            id: "draft",
            validation: {
              ok: false,
              errors: [{ code: "parse-error", scope: "document", message: detail.error }],
              warnings: [],
            },
          },
        ],
        graphs: [],
      };
    }
  }
  return null;
}
