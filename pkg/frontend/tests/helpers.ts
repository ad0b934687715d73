import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type {
  CreateSessionResponse,
  TranscriptResponse,
  UtteranceResponse,
} from "../src/types.js";

export interface RecordedSession {
  label: "achieving" | "missing";
  create: {
    request: Record<string, unknown>;
    response: CreateSessionResponse;
  };
  exchanges: {
    request: { text: string };
    response: UtteranceResponse;
  }[];
  transcript: { response: TranscriptResponse };
}

export interface RecordedContract {
  sessions: RecordedSession[];
}

export function loadContract(): RecordedContract {
  const here = dirname(fileURLToPath(import.meta.url));
  const raw = readFileSync(join(here, "fixtures", "session_exchange.json"), "utf-8");
  return JSON.parse(raw) as RecordedContract;
}

/** fetch stub that replays one recorded session in order. */
export function replayFetch(session: RecordedSession): typeof fetch {
  let exchange = 0;
  return async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    const method = init?.method ?? "GET";
    let payload: unknown;
    if (method === "POST" && url.endsWith("/session")) {
      payload = session.create.response;
    } else if (method === "POST" && url.endsWith("/utterance")) {
      payload = session.exchanges[exchange]!.response;
      exchange += 1;
    } else if (method === "GET") {
      payload = session.transcript.response;
    } else if (method === "DELETE") {
      payload = { deleted: session.create.response.id };
    } else {
      throw new Error(`unexpected request ${method} ${url}`);
    }
    return new Response(JSON.stringify(payload), {
      status: 200,
      headers: { "Content-Type": "application/json" },
    });
  };
}
