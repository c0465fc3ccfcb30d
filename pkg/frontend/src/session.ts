// Session state behind the cards. Candidate order always mirrors the
// service's ranked list, verdicts update optimistically and reconcile
// with the server's acknowledgment, and the whole state is rebuildable
// from the service so a refresh loses nothing.

import { ServiceClient, ServiceError } from "./api.js";
import type { CandidateRow, EvidenceRow, PassageEntry, ReplacementRecord, Verdict } from "./types.js";

export interface PassageCard {
  passageId: string;
  rawText: string;
  normalizedText: string;
  candidates: CandidateRow[]; // service order, never resorted
  evidence: Record<string, EvidenceRow[]>;
  replacements: ReplacementRecord[];
  verdicts: Map<string, Verdict>; // technique -> latest acknowledged/optimistic verdict
  pending: Set<string>; // techniques with an in-flight decision
}

function cardFromEntry(entry: PassageEntry): PassageCard {
  return {
    passageId: entry.passage_id,
    rawText: entry.raw_text,
    normalizedText: entry.normalized_text,
    candidates: entry.result.final,
    evidence: entry.result.evidence ?? {},
    replacements: entry.result.replacements ?? [],
    verdicts: new Map(),
    pending: new Set(),
  };
}

export class AnnotationSession {
  sessionId: string | null = null;
  cards: PassageCard[] = [];

  constructor(private client: ServiceClient) {}

  /** Paste-to-cards: one card per passage, annotated by the service. */
  async importReport(rawText: string): Promise<PassageCard[]> {
    if (!rawText.trim()) throw new Error("paste a non-empty report first");
    if (this.sessionId === null) {
      this.sessionId = await this.client.createSession();
    }
    const entries = await this.client.addPassages(this.sessionId, rawText);
    const cards = entries.map(cardFromEntry);
    this.cards.push(...cards);
    return cards;
  }

  /** Rebuild the full state from the service (refresh-safe). */
  async loadFromServer(sessionId: string): Promise<void> {
    const [entries, decisions] = await Promise.all([
      this.client.getPassages(sessionId),
      this.client.getDecisions(sessionId),
    ]);
    this.sessionId = sessionId;
    this.cards = entries.map(cardFromEntry);
    const byId = new Map(this.cards.map((c) => [c.passageId, c]));
    for (const decision of decisions) {
      byId.get(decision.passage_id)?.verdicts.set(decision.technique_id, decision.verdict);
    }
  }

  card(passageId: string): PassageCard {
    const card = this.cards.find((c) => c.passageId === passageId);
    if (!card) throw new Error(`unknown passage ${passageId}`);
    return card;
  }

  /** Optimistic verdict, reconciled with the server acknowledgment.
   *  Undo is just issuing the opposite verdict. A conflict (409) refreshes
   *  the card's verdicts from the server instead of guessing. */
  async decide(passageId: string, techniqueId: string, verdict: Verdict): Promise<void> {
    if (this.sessionId === null) throw new Error("no active session");
    const card = this.card(passageId);
    const previous = card.verdicts.get(techniqueId);
    card.verdicts.set(techniqueId, verdict);
    card.pending.add(techniqueId);
    try {
      const ack = await this.client.decide(this.sessionId, passageId, techniqueId, verdict);
      card.verdicts.set(ack.technique_id, ack.verdict); // server acknowledgment wins
    } catch (err) {
      if (err instanceof ServiceError && err.status === 409) {
        await this.refreshVerdicts(passageId);
      } else {
        // roll the optimistic update back and let the caller surface it
        if (previous === undefined) card.verdicts.delete(techniqueId);
        else card.verdicts.set(techniqueId, previous);
        throw err;
      }
    } finally {
      card.pending.delete(techniqueId);
    }
  }

  private async refreshVerdicts(passageId: string): Promise<void> {
    if (this.sessionId === null) return;
    const decisions = await this.client.getDecisions(this.sessionId);
    const card = this.card(passageId);
    card.verdicts.clear();
    for (const d of decisions) {
      if (d.passage_id === passageId) card.verdicts.set(d.technique_id, d.verdict);
    }
  }

  get acceptedCount(): number {
    let n = 0;
    for (const card of this.cards) {
      for (const verdict of card.verdicts.values()) if (verdict === "accepted") n += 1;
    }
    return n;
  }

  get canExport(): boolean {
    return this.acceptedCount > 0;
  }

  async exportDataset(): Promise<{ content: string; filename: string }> {
    if (this.sessionId === null) throw new Error("no active session");
    return this.client.exportDataset(this.sessionId);
  }
}
