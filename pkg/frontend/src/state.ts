/** Client session state: a strict mirror of the latest server responses.
 *
 * Phases: idle -> in-session -> achieved | ended. Nothing skips in-session,
 * and every displayed value originates from a server payload stored here.
 */

import type {
  CreateSessionResponse,
  KeywordRef,
  PredictionDump,
  TranscriptResponse,
  TranscriptTurn,
  UtteranceResponse,
} from "./types.js";

export type Phase = "idle" | "in-session" | "achieved" | "ended";

export interface SessionView {
  sessionId: string;
  target: KeywordRef;
  transcript: TranscriptTurn[];
  predictions: PredictionDump[];
  achieved: boolean;
}

export class SessionStore {
  phase: Phase = "idle";
  view: SessionView | null = null;
  busy = false; // single in-flight request per session

  start(response: CreateSessionResponse): SessionView {
    if (this.phase !== "idle" && this.phase !== "ended") {
      throw new Error(`cannot start a session from phase ${this.phase}`);
    }
    this.view = {
      sessionId: response.id,
      target: response.target,
      transcript: [],
      predictions: [],
      achieved: false,
    };
    this.phase = "in-session";
    return this.view;
  }

  applyExchange(userText: string, response: UtteranceResponse): SessionView {
    const view = this.requireSession();
    view.transcript = [
      ...view.transcript,
      { speaker: "user", text: userText },
      { speaker: "system", text: response.reply },
    ];
    view.predictions = [
      ...view.predictions,
      {
        keywords: response.keywords,
        selection: response.selection,
        bias_top: response.bias_top,
      },
    ];
    view.achieved = response.achieved;
    if (response.achieved) {
      this.phase = "achieved";
    }
    return view;
  }

  applyTranscript(response: TranscriptResponse): SessionView {
    const view = this.requireSession();
    view.transcript = response.transcript;
    view.predictions = response.predictions;
    view.achieved = response.achieved;
    if (response.achieved) {
      this.phase = "achieved";
    }
    return view;
  }

  end(): void {
    if (this.phase === "idle") {
      throw new Error("no session to end");
    }
    this.phase = "ended";
    this.view = null;
  }

  private requireSession(): SessionView {
    if (this.view === null || (this.phase !== "in-session" && this.phase !== "achieved")) {
      throw new Error(`no active session (phase ${this.phase})`);
    }
    return this.view;
  }
}
