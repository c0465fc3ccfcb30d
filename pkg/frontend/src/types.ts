// Shapes of the annotation service's JSON API (see GET /schema).

export interface CandidateRow {
  technique_id: string;
  score: number;
  score_kind: string;
  title?: string;
}

export interface ReplacementRecord {
  span: [number, number]; // byte offsets into the UTF-8 encoded input
  class: string;
  literal: string;
}

export interface EvidenceRow {
  item_id: string;
  relevance: number;
  pair_prefix: string;
}

export interface AnnotateResult {
  query_id: string;
  normalized_text: string;
  replacements: ReplacementRecord[];
  final: CandidateRow[];
  warnings: string[];
  evidence?: Record<string, EvidenceRow[]>;
  per_stage?: Record<string, CandidateRow[]>;
}

export interface PassageEntry {
  passage_id: string;
  raw_text: string;
  normalized_text: string;
  result: AnnotateResult;
}

export type Verdict = "accepted" | "rejected";

export interface DecisionEntry {
  passage_id: string;
  technique_id: string;
  verdict: Verdict;
}

export interface TechniqueSummary {
  id: string;
  title: string;
  n_sections: number;
}
