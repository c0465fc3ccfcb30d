// DOM wiring: paste box -> passage cards -> verdicts -> export download.
// The session id lives in the URL hash so a refresh rebuilds everything
// from the service.

import { ServiceClient, ServiceError } from "./api.js";
import { replacementSegments, sharedTermSegments } from "./highlight.js";
import { AnnotationSession, type PassageCard } from "./session.js";
import type { Verdict } from "./types.js";

const serviceUrl =
  (document.querySelector("meta[name=ttpmap-service]") as HTMLMetaElement | null)?.content ??
  "http://127.0.0.1:8765";

const client = new ServiceClient(serviceUrl);
const session = new AnnotationSession(client);

const el = {
  reportInput: document.getElementById("report-input") as HTMLTextAreaElement,
  importButton: document.getElementById("import-button") as HTMLButtonElement,
  exportButton: document.getElementById("export-button") as HTMLButtonElement,
  cards: document.getElementById("cards") as HTMLDivElement,
  errorBanner: document.getElementById("error-banner") as HTMLDivElement,
  sessionLabel: document.getElementById("session-label") as HTMLSpanElement,
};

let lastFailedAction: (() => Promise<void>) | null = null;

function showError(message: string, retryable: boolean, retry: (() => Promise<void>) | null) {
  el.errorBanner.textContent = message;
  el.errorBanner.classList.remove("hidden");
  lastFailedAction = retryable ? retry : null;
  if (retryable && retry) {
    const button = document.createElement("button");
    button.textContent = "Retry";
    button.addEventListener("click", () => void runGuarded(retry));
    el.errorBanner.append(" ", button);
  }
}

function clearError() {
  el.errorBanner.textContent = "";
  el.errorBanner.classList.add("hidden");
  lastFailedAction = null;
}

async function runGuarded(action: () => Promise<void>) {
  clearError();
  try {
    await action();
  } catch (err) {
    const retryable = err instanceof ServiceError && err.retryable;
    showError(String(err instanceof Error ? err.message : err), retryable, action);
  }
  render();
}

function verdictButton(card: PassageCard, techniqueId: string, verdict: Verdict): HTMLButtonElement {
  const button = document.createElement("button");
  button.textContent = verdict === "accepted" ? "Accept" : "Reject";
  button.className = `verdict ${verdict}`;
  if (card.verdicts.get(techniqueId) === verdict) button.classList.add("active");
  button.disabled = card.pending.has(techniqueId);
  button.addEventListener("click", () =>
    void runGuarded(async () => {
      // clicking the active verdict again undoes it with the opposite one
      const current = card.verdicts.get(techniqueId);
      const next: Verdict =
        current === verdict ? (verdict === "accepted" ? "rejected" : "accepted") : verdict;
      await session.decide(card.passageId, techniqueId, next);
    }),
  );
  return button;
}

function renderCard(card: PassageCard): HTMLElement {
  const root = document.createElement("article");
  root.className = "card";

  const passage = document.createElement("p");
  passage.className = "passage";
  for (const segment of replacementSegments(card.rawText, card.replacements)) {
    if (segment.iocClass) {
      const mark = document.createElement("mark");
      mark.className = "ioc";
      mark.title = segment.iocClass;
      mark.textContent = segment.text;
      passage.append(mark);
    } else {
      passage.append(segment.text);
    }
  }
  root.append(passage);

  const list = document.createElement("ol");
  list.className = "candidates";
  for (const candidate of card.candidates) {
    // order mirrors the service's ranked list; never resorted client-side
    const row = document.createElement("li");
    const head = document.createElement("div");
    head.className = "candidate-head";
    const label = document.createElement("span");
    label.textContent = `${candidate.technique_id} ${candidate.title ?? ""}`;
    const score = document.createElement("span");
    score.className = "score";
    score.textContent = candidate.score.toFixed(4);
    head.append(label, score, verdictButton(card, candidate.technique_id, "accepted"),
      verdictButton(card, candidate.technique_id, "rejected"));
    row.append(head);

    const evidence = card.evidence[candidate.technique_id]?.[0];
    if (evidence) {
      const snippet = document.createElement("p");
      snippet.className = "evidence";
      snippet.title = evidence.item_id;
      for (const segment of sharedTermSegments(evidence.pair_prefix, card.normalizedText)) {
        if (segment.shared) {
          const mark = document.createElement("mark");
          mark.textContent = segment.text;
          snippet.append(mark);
        } else {
          snippet.append(segment.text);
        }
      }
      row.append(snippet);
    }
    list.append(row);
  }
  root.append(list);
  return root;
}

function render() {
  el.cards.replaceChildren(...session.cards.map(renderCard));
  el.exportButton.disabled = !session.canExport;
  el.sessionLabel.textContent = session.sessionId ? `session ${session.sessionId}` : "no session";
  if (session.sessionId) window.location.hash = session.sessionId;
}

el.importButton.addEventListener("click", () =>
  void runGuarded(async () => {
    await session.importReport(el.reportInput.value);
    el.reportInput.value = "";
  }),
);

el.exportButton.addEventListener("click", () =>
  void runGuarded(async () => {
    const { content, filename } = await session.exportDataset();
    const blob = new Blob([content], { type: "application/x-ndjson" });
    const url = URL.createObjectURL(blob);
    const anchor = document.createElement("a");
    anchor.href = url;
    anchor.download = filename; // filename embeds the session id
    anchor.click();
    URL.revokeObjectURL(url);
  }),
);

const initialSession = window.location.hash.replace(/^#/, "");
if (initialSession) {
  void runGuarded(() => session.loadFromServer(initialSession));
} else {
  render();
}
