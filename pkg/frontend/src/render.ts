/** Pure HTML builders; every number and flag comes from server payloads. */

import type {
  BiasEntry,
  KeywordPanel,
  KeywordRef,
  PredictionDump,
  TranscriptTurn,
} from "./types.js";
import type { Phase } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderBanner(target: KeywordRef | null, phase: Phase): string {
  if (target === null || phase === "idle") {
    return `<div class="banner idle">no session</div>`;
  }
  const label = `${escapeHtml(target.type)} &ndash; ${escapeHtml(target.topic)}`;
  if (phase === "achieved") {
    return `<div class="banner achieved">target achieved: ${label}</div>`;
  }
  if (phase === "ended") {
    return `<div class="banner ended">session ended</div>`;
  }
  return `<div class="banner active">target: ${label}</div>`;
}

export function renderTranscript(turns: TranscriptTurn[]): string {
  const rows = turns
    .map(
      (t) =>
        `<div class="turn ${t.speaker}"><span class="speaker">${t.speaker}</span>` +
        `<span class="text">${escapeHtml(t.text)}</span></div>`,
    )
    .join("");
  return `<div class="transcript">${rows}</div>`;
}

function keywordRows(rows: { name: string; prob: number; picked: boolean }[],
                     limit: number): string {
  return rows
    .slice(0, limit)
    .map(
      (r) =>
        `<li class="${r.picked ? "picked" : ""}">` +
        `<span class="name">${escapeHtml(r.name)}</span>` +
        `<span class="prob">${r.prob.toFixed(3)}</span></li>`,
    )
    .join("");
}

export function renderKeywordPanel(panel: KeywordPanel | null, topicLimit = 8): string {
  if (panel === null) {
    return `<div class="keywords empty">no predictions yet</div>`;
  }
  return (
    `<div class="keywords">` +
    `<h3>keyword types</h3><ul>${keywordRows(panel.type, panel.type.length)}</ul>` +
    `<h3>keyword topics</h3><ul>${keywordRows(panel.topic, topicLimit)}</ul>` +
    `</div>`
  );
}

export function renderBiasPanel(entries: BiasEntry[] | null): string {
  if (entries === null || entries.length === 0) {
    return `<div class="bias empty">no bias yet</div>`;
  }
  const rows = entries
    .map(
      (e) =>
        `<li><span class="token">${escapeHtml(e.token)}</span>` +
        `<span class="prob">${e.prob.toFixed(4)}</span></li>`,
    )
    .join("");
  return `<div class="bias"><h3>scenario bias</h3><ul>${rows}</ul></div>`;
}

/** One node per turn: the picked (type, topic) names, fallback turns flagged. */
export function renderTrajectory(predictions: PredictionDump[]): string {
  const nodes = predictions.map((dump, i) => {
    const types = dump.keywords.type.filter((r) => r.picked).map((r) => r.name);
    const topics = dump.keywords.topic.filter((r) => r.picked).map((r) => r.name);
    const fallback = dump.selection.fallback ? ` <em class="fallback">fallback</em>` : "";
    return (
      `<li class="node"><span class="step">${i + 1}</span>` +
      `<span class="types">${escapeHtml(types.join(", "))}</span>` +
      `<span class="topics">${escapeHtml(topics.join(", "))}</span>${fallback}</li>`
    );
  });
  return `<ol class="trajectory">${nodes.join("")}</ol>`;
}
