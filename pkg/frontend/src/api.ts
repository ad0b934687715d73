/** Thin fetch client for the chat server. No local inference, no local state. */

import type {
  CreateSessionRequest,
  CreateSessionResponse,
  TranscriptResponse,
  UtteranceResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly fields: { field: string; message: string }[] = [],
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<never> {
  let fields: { field: string; message: string }[] = [];
  let message = `${response.status} ${response.statusText}`;
  try {
    const body = await response.json();
    if (Array.isArray(body.errors)) {
      fields = body.errors;
      message = fields.map((e) => `${e.field}: ${e.message}`).join("; ");
    } else if (typeof body.detail === "string") {
      message = body.detail;
    }
  } catch {
    // non-JSON error body: keep the status line
  }
  throw new ApiError(response.status, message, fields);
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(`${base}${path}`, {
    headers: { "Content-Type": "application/json" },
    ...init,
  });
  if (!response.ok) {
    await parseError(response);
  }
  return (await response.json()) as T;
}

export class ChatApi {
  constructor(readonly base: string = "") {}

  createSession(body: CreateSessionRequest): Promise<CreateSessionResponse> {
    return request(this.base, "/session", {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  sendUtterance(sessionId: string, text: string): Promise<UtteranceResponse> {
    return request(this.base, `/session/${sessionId}/utterance`, {
      method: "POST",
      body: JSON.stringify({ text }),
    });
  }

  getSession(sessionId: string): Promise<TranscriptResponse> {
    return request(this.base, `/session/${sessionId}`);
  }

  deleteSession(sessionId: string): Promise<{ deleted: string }> {
    return request(this.base, `/session/${sessionId}`, { method: "DELETE" });
  }
}
