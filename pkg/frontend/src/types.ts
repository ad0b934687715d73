/** Wire types mirroring the chat server's REST contract, field for field. */

export interface KeywordRef {
  type: string;
  topic: string;
}

export interface KeywordRow {
  name: string;
  prob: number;
  picked: boolean;
}

export interface KeywordPanel {
  type: KeywordRow[];
  topic: KeywordRow[];
}

export interface SelectionPick {
  id: number;
  weight: number;
}

export interface Selection {
  mode: "hard" | "soft";
  type_picks: SelectionPick[];
  topic_picks: SelectionPick[];
  fallback: boolean;
}

export interface BiasEntry {
  token: string;
  prob: number;
}

export interface PredictionDump {
  keywords: KeywordPanel;
  selection: Selection;
  bias_top: BiasEntry[];
}

export interface CreateSessionRequest {
  profile: Record<string, string>;
  knowledge: [string, string, string][];
  target: KeywordRef;
}

export interface CreateSessionResponse {
  id: string;
  target: KeywordRef;
}

export interface UtteranceResponse extends PredictionDump {
  reply: string;
  achieved: boolean;
}

export interface TranscriptTurn {
  speaker: "user" | "system";
  text: string;
}

export interface TranscriptResponse {
  id: string;
  target: KeywordRef;
  transcript: TranscriptTurn[];
  achieved: boolean;
  predictions: PredictionDump[];
}
