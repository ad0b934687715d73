/** DOM wiring. State transitions and rendering live in state.ts / render.ts. */

import { ApiError, ChatApi } from "./api.js";
import { SessionStore } from "./state.js";
import {
  renderBanner,
  renderBiasPanel,
  renderKeywordPanel,
  renderTranscript,
  renderTrajectory,
} from "./render.js";
import type { CreateSessionRequest } from "./types.js";

const api = new ChatApi("");
const store = new SessionStore();

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

function redraw(): void {
  const view = store.view;
  el("banner").innerHTML = renderBanner(view?.target ?? null, store.phase);
  el("transcript").innerHTML = renderTranscript(view?.transcript ?? []);
  const last = view?.predictions.at(-1) ?? null;
  el("keywords").innerHTML = renderKeywordPanel(last?.keywords ?? null);
  el("bias").innerHTML = renderBiasPanel(last?.bias_top ?? null);
  el("trajectory").innerHTML = renderTrajectory(view?.predictions ?? []);
  const inSession = store.phase === "in-session" || store.phase === "achieved";
  (el("send") as HTMLButtonElement).disabled = store.busy || !inSession;
  (el("start") as HTMLButtonElement).disabled = store.busy || inSession;
  (el("end") as HTMLButtonElement).disabled = !inSession;
}

function showError(err: unknown): void {
  const box = el("error");
  box.textContent = err instanceof ApiError
    ? `server rejected the request: ${err.message}`
    : `request failed: ${String(err)} (is the server running?)`;
  box.classList.remove("hidden");
}

function clearError(): void {
  el("error").classList.add("hidden");
}

function parseSetup(): CreateSessionRequest {
  const profileText = (el("profile") as HTMLTextAreaElement).value;
  const knowledgeText = (el("knowledge") as HTMLTextAreaElement).value;
  const profile: Record<string, string> = {};
  for (const line of profileText.split("\n")) {
    const [key, ...rest] = line.split(":");
    if (key.trim() && rest.length) profile[key.trim()] = rest.join(":").trim();
  }
  const knowledge: [string, string, string][] = [];
  for (const line of knowledgeText.split("\n")) {
    const parts = line.split("|").map((p) => p.trim());
    if (parts.length === 3 && parts.every(Boolean)) {
      knowledge.push([parts[0], parts[1], parts[2]]);
    }
  }
  return {
    profile,
    knowledge,
    target: {
      type: (el("target-type") as HTMLInputElement).value.trim(),
      topic: (el("target-topic") as HTMLInputElement).value.trim(),
    },
  };
}

async function startSession(): Promise<void> {
  clearError();
  store.busy = true;
  redraw();
  try {
    const created = await api.createSession(parseSetup());
    store.start(created);
  } catch (err) {
    showError(err);
  } finally {
    store.busy = false;
    redraw();
  }
}

async function sendUtterance(): Promise<void> {
  const input = el("utterance") as HTMLInputElement;
  const text = input.value.trim();
  if (!text || !store.view) return; // empty input rejected client-side
  clearError();
  store.busy = true;
  redraw();
  try {
    const response = await api.sendUtterance(store.view.sessionId, text);
    store.applyExchange(text, response);
    input.value = "";
  } catch (err) {
    showError(err);
  } finally {
    store.busy = false;
    redraw();
  }
}

async function endSession(): Promise<void> {
  if (store.view) {
    try {
      await api.deleteSession(store.view.sessionId);
    } catch {
      // closing anyway; the server expires idle sessions on its own
    }
  }
  store.end();
  redraw();
}

export function boot(): void {
  el("start").addEventListener("click", () => void startSession());
  el("send").addEventListener("click", () => void sendUtterance());
  el("end").addEventListener("click", () => void endSession());
  el("utterance").addEventListener("keydown", (event) => {
    if ((event as KeyboardEvent).key === "Enter") void sendUtterance();
  });
  redraw();
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  boot();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", boot);
}
