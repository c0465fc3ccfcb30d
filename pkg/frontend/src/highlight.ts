// Span arithmetic for the passage and evidence renderers. The service
// reports indicator replacements as byte offsets into the UTF-8 encoding
// of the raw passage, so segments are carved out of the byte array and
// decoded back to strings.

import type { ReplacementRecord } from "./types.js";

export interface TextSegment {
  text: string;
  iocClass?: string; // set when the segment is a replaced indicator literal
}

const encoder = new TextEncoder();
const decoder = new TextDecoder();

/** Split raw passage text into plain and indicator segments, in order. */
export function replacementSegments(
  rawText: string,
  replacements: ReplacementRecord[],
): TextSegment[] {
  const bytes = encoder.encode(rawText);
  const segments: TextSegment[] = [];
  let pos = 0;
  for (const rep of replacements) {
    const [start, end] = rep.span;
    if (start > pos) segments.push({ text: decoder.decode(bytes.subarray(pos, start)) });
    segments.push({ text: decoder.decode(bytes.subarray(start, end)), iocClass: rep.class });
    pos = end;
  }
  if (pos < bytes.length) segments.push({ text: decoder.decode(bytes.subarray(pos)) });
  return segments;
}

const WORD_RE = /[A-Za-z0-9]+/g;
const MIN_SHARED_LENGTH = 3;

export interface SnippetSegment {
  text: string;
  shared: boolean; // word also present in the query
}

/** Mark the words an evidence snippet shares with the query text. */
export function sharedTermSegments(snippet: string, queryText: string): SnippetSegment[] {
  const queryWords = new Set(
    (queryText.toLowerCase().match(WORD_RE) ?? []).filter((w) => w.length >= MIN_SHARED_LENGTH),
  );
  const segments: SnippetSegment[] = [];
  let pos = 0;
  for (const match of snippet.matchAll(WORD_RE)) {
    const start = match.index ?? 0;
    const word = match[0];
    const shared = queryWords.has(word.toLowerCase()) && word.length >= MIN_SHARED_LENGTH;
    if (start > pos) segments.push({ text: snippet.slice(pos, start), shared: false });
    segments.push({ text: word, shared });
    pos = start + word.length;
  }
  if (pos < snippet.length) segments.push({ text: snippet.slice(pos), shared: false });
  return segments;
}
